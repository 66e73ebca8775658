#include <math.h>
#include <stdio.h>
#include <string.h>

#include "adobi.h"

#define CHECK(call)                                                     \
    do {                                                                \
        AdobiStatus s_ = (call);                                        \
        if (s_ != ADOBI_STATUS_OK) {                                    \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, adobi_last_error()); \
            return 1;                                                   \
        }                                                               \
    } while (0)

int main(void) {
    AdobiImage *x = NULL, *back = NULL;
    AdobiMaps *maps = NULL, *init = NULL;
    AdobiMask *mask = NULL;
    AdobiKSpace *y = NULL;
    CHECK(adobi_phantom(32, 6, 1, &x));
    CHECK(adobi_coils(4, 32, 32, 0.0, 1, &maps, &init));
    CHECK(adobi_mask_new(32, 32, 1, 8, ADOBI_MASK_STYLE_EQUISPACED, 1, &mask));
    CHECK(adobi_forward(maps, mask, x, &y));
    CHECK(adobi_adjoint(maps, y, &back));
    double p = 0.0;
    CHECK(adobi_psnr(x, back, &p));
    if (!(p > 100.0)) {
        fprintf(stderr, "psnr %f\n", p);
        return 1;
    }
    if (adobi_phantom(32, 6, 1, NULL) != ADOBI_STATUS_NULL_POINTER) {
        fprintf(stderr, "expected a null-pointer status\n");
        return 1;
    }
    if (strlen(adobi_last_error()) == 0) {
        fprintf(stderr, "missing error message\n");
        return 1;
    }
    adobi_image_free(x);
    adobi_image_free(back);
    adobi_maps_free(maps);
    adobi_maps_free(init);
    adobi_mask_free(mask);
    adobi_kspace_free(y);
    printf("ok %s\n", adobi_version());
    return 0;
}
