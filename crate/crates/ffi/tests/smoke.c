#include <stdio.h>
#include <stdlib.h>

#include "funcdict.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        FdStatus s_ = (call);                                              \
        if (s_ != FD_STATUS_OK) {                                          \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_,        \
                    fd_last_error());                                      \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    FdDataset *ds = NULL;
    FdModel *model = NULL;
    size_t n = 0;

    CHECK(fd_dataset_generate("table4", 2, 128, 3, &ds));
    CHECK(fd_dataset_num_points(ds, 0, &n));
    double *xyz = malloc(3 * n * sizeof(double));
    size_t *labels = malloc(n * sizeof(size_t));
    CHECK(fd_dataset_points(ds, 0, xyz, 3 * n));
    CHECK(fd_dataset_labels(ds, 0, labels, n));

    CHECK(fd_model_init("seg", 8, 0, &model));
    size_t k = fd_model_k(model);
    double *a = malloc(n * k * sizeof(double));
    CHECK(fd_model_forward(model, xyz, n, a, n * k));

    double miou = -1.0;
    CHECK(fd_matched_miou(a, n, k, labels, &miou));
    if (!(miou >= 0.0 && miou <= 1.0)) {
        fprintf(stderr, "miou out of range: %f\n", miou);
        return 1;
    }
    if (fd_model_forward(model, xyz, n, a, 1) != FD_STATUS_INVALID_ARGUMENT || fd_last_error() == NULL) {
        fprintf(stderr, "short buffer accepted\n");
        return 1;
    }
    printf("funcdict %s: %zu points, k=%zu, miou=%.4f\n", fd_version(), n, k, miou);

    free(a);
    free(labels);
    free(xyz);
    fd_model_free(model);
    fd_dataset_free(ds);
    return 0;
}
