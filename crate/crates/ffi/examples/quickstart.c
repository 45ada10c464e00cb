/* Minimal consumer of the C API: build a model, run Q-learning under the
 * uniform behavior policy, and print the error decay.
 *
 * From the workspace root:
 *   cargo build -p sa-lab-ffi
 *   cc crates/ffi/examples/quickstart.c -Icrates/ffi/include \
 *      -Ltarget/debug -lsa_lab_ffi -lm -o quickstart
 *   LD_LIBRARY_PATH=target/debug ./quickstart
 */
#include <stdio.h>
#include <stdlib.h>

#include "sa_lab.h"

#define CHECK(call)                                                  \
    do {                                                             \
        SaStatus status_ = (call);                                   \
        if (status_ != SA_STATUS_OK) {                               \
            fprintf(stderr, "%s failed (%d): %s\n", #call,           \
                    (int)status_, sa_last_error());                  \
            exit(1);                                                 \
        }                                                            \
    } while (0)

static const char *MODEL =
    "{\"n_states\": 2, \"n_actions\": 2, \"gamma\": 0.6,"
    " \"reward\": [[1.0, 0.0], [0.5, 2.0]],"
    " \"transition\": [[[0.7, 0.3], [0.4, 0.6]],"
    "                  [[0.2, 0.8], [0.9, 0.1]]]}";

int main(void) {
    printf("sa-lab %s\n", sa_version());

    SaMdp *mdp = NULL;
    CHECK(sa_mdp_from_json(MODEL, &mdp));

    SaMap *map = NULL;
    CHECK(sa_map_q(mdp, NULL, 0, &map));
    size_t dim = sa_map_dim(map);
    printf("dim %zu, contraction modulus %.6f\n", dim, sa_map_kappa(map));

    SaRecord *rec = NULL;
    CHECK(sa_run(map, SA_SCHEDULE_FAMILY_POLY, 2.0, 0.9, 100000, 42, &rec));

    size_t n = sa_record_num_checkpoints(rec);
    for (size_t i = 0; i < n; i += n / 8 + 1) {
        uint64_t t;
        double err_sq;
        CHECK(sa_record_checkpoint(rec, i, &t, &err_sq));
        printf("t = %8llu  error^2 = %.3e\n", (unsigned long long)t, err_sq);
    }
    printf("final error^2 = %.3e\n", sa_record_final_error_sq(rec));

    double *w = malloc(dim * sizeof *w);
    double *q_star = malloc(dim * sizeof *q_star);
    CHECK(sa_record_final_iterate(rec, w, dim));
    CHECK(sa_map_fixed_point(map, q_star, dim));
    for (size_t i = 0; i < dim; i++)
        printf("w[%zu] = %9.6f   q*[%zu] = %9.6f\n", i, w[i], i, q_star[i]);

    free(w);
    free(q_star);
    sa_record_free(rec);
    sa_map_free(map);
    sa_mdp_free(mdp);
    return 0;
}
