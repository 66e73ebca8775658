#ifndef ADOBI_H
#define ADOBI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum AdobiStatus {
  ADOBI_STATUS_OK = 0,
  ADOBI_STATUS_NULL_POINTER = 1,
  ADOBI_STATUS_INVALID_ARGUMENT = 2,
  ADOBI_STATUS_DIMENSION = 3,
  ADOBI_STATUS_CALIBRATION = 4,
  ADOBI_STATUS_SCHEDULE = 5,
  ADOBI_STATUS_DEGENERATE_MODEL = 6,
  ADOBI_STATUS_CONFIGURATION = 7,
  ADOBI_STATUS_NUMERICAL = 8,
  ADOBI_STATUS_FORMAT = 9,
  ADOBI_STATUS_IO = 10,
  ADOBI_STATUS_PANIC = 11,
} AdobiStatus;

/*
 Column layout for [`adobi_mask_new`].
 */
typedef enum AdobiMaskStyle {
  ADOBI_MASK_STYLE_EQUISPACED = 0,
  ADOBI_MASK_STYLE_RANDOM = 1,
} AdobiMaskStyle;

/*
 Bridge noise handling for [`AdobiSamplerParams`].
 */
typedef enum AdobiNoiseMode {
  ADOBI_NOISE_MODE_AS_WRITTEN = 0,
  ADOBI_NOISE_MODE_VARIANCE_MATCHED = 1,
  ADOBI_NOISE_MODE_ODE = 2,
} AdobiNoiseMode;

typedef struct AdobiConfig AdobiConfig;

typedef struct AdobiDenoiser AdobiDenoiser;

typedef struct AdobiImage AdobiImage;

typedef struct AdobiKSpace AdobiKSpace;

typedef struct AdobiMaps AdobiMaps;

typedef struct AdobiMask AdobiMask;

/*
 Sampler and schedule settings.
 */
typedef struct AdobiSamplerParams {
  size_t nfe;
  double gamma1;
  double csm_lambda;
  size_t csm_steps;
  double csm_lr;
  enum AdobiNoiseMode noise_mode;
  /*
   Nonzero enables coil map refinement.
   */
  int32_t calibrate;
  uint64_t seed;
  /*
   Fine schedule length.
   */
  size_t n_steps;
  double sigma_max;
} AdobiSamplerParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Releases the handle; null is ignored.
 */
void adobi_image_free(struct AdobiImage *handle);

/*
 Releases the handle; null is ignored.
 */
void adobi_maps_free(struct AdobiMaps *handle);

/*
 Releases the handle; null is ignored.
 */
void adobi_mask_free(struct AdobiMask *handle);

/*
 Releases the handle; null is ignored.
 */
void adobi_kspace_free(struct AdobiKSpace *handle);

/*
 Releases the handle; null is ignored.
 */
void adobi_config_free(struct AdobiConfig *handle);

/*
 Releases the handle; null is ignored.
 */
void adobi_denoiser_free(struct AdobiDenoiser *handle);

/*
 Library version as a static NUL-terminated string.
 */
const char *adobi_version(void);

/*
 Message for the most recent failure on this thread; empty after a
 success. Valid until the next call on the same thread.
 */
const char *adobi_last_error(void);

/*
 Builds an image from `height * width` interleaved complex values.
 */
enum AdobiStatus adobi_image_new(size_t height,
                                 size_t width,
                                 const double *data,
                                 struct AdobiImage **out);

enum AdobiStatus adobi_image_shape(const struct AdobiImage *image, size_t *height, size_t *width);

/*
 Copies the pixels into `out`, which must hold `len = height * width`
 interleaved complex values.
 */
enum AdobiStatus adobi_image_data(const struct AdobiImage *image, double *out, size_t len);

/*
 Ellipse phantom of side `size` with peak magnitude 1.
 */
enum AdobiStatus adobi_phantom(size_t size,
                               size_t n_ellipses,
                               uint64_t seed,
                               struct AdobiImage **out);

/*
 Smooth coil maps and a perturbed copy; both are normalized.
 */
enum AdobiStatus adobi_coils(size_t n_coils,
                             size_t height,
                             size_t width,
                             double perturbation,
                             uint64_t seed,
                             struct AdobiMaps **true_out,
                             struct AdobiMaps **initial_out);

enum AdobiStatus adobi_maps_n_coils(const struct AdobiMaps *maps, size_t *out);

/*
 Copies coil `coil` into `out` (`len = height * width` complex values).
 */
enum AdobiStatus adobi_maps_coil_data(const struct AdobiMaps *maps,
                                      size_t coil,
                                      double *out,
                                      size_t len);

/*
 Column mask with a centred fully sampled block of `acs_width` columns.
 */
enum AdobiStatus adobi_mask_new(size_t height,
                                size_t width,
                                size_t acceleration,
                                size_t acs_width,
                                enum AdobiMaskStyle style,
                                uint64_t seed,
                                struct AdobiMask **out);

enum AdobiStatus adobi_mask_kept_count(const struct AdobiMask *mask, size_t *out);

/*
 `y = P F S x`.
 */
enum AdobiStatus adobi_forward(const struct AdobiMaps *maps,
                               const struct AdobiMask *mask,
                               const struct AdobiImage *x,
                               struct AdobiKSpace **out);

/*
 `A^H y` with the given maps and the mask carried by `y`.
 */
enum AdobiStatus adobi_adjoint(const struct AdobiMaps *maps,
                               const struct AdobiKSpace *y,
                               struct AdobiImage **out);

enum AdobiStatus adobi_kspace_n_coils(const struct AdobiKSpace *y, size_t *out);

/*
 Adds complex Gaussian noise on the acquired samples with
 `‖e‖ = level · ‖y‖`.
 */
enum AdobiStatus adobi_add_noise(const struct AdobiKSpace *y,
                                 double level,
                                 uint64_t seed,
                                 struct AdobiKSpace **out);

enum AdobiStatus adobi_zero_filled(const struct AdobiKSpace *y,
                                   const struct AdobiMaps *maps,
                                   struct AdobiImage **out);

/*
 Experiment configuration with every key at its default.
 */
enum AdobiStatus adobi_config_new(struct AdobiConfig **out);

/*
 Sets one `key = value` pair using the configuration file syntax.
 */
enum AdobiStatus adobi_config_set(struct AdobiConfig *cfg, const char *key, const char *value);

/*
 Denoiser selected by the configuration: a Gaussian oracle fitted on
 simulated training cases or a ridge denoiser loaded from disk.
 */
enum AdobiStatus adobi_denoiser_from_config(const struct AdobiConfig *cfg,
                                            struct AdobiDenoiser **out);

/*
 Fills `params` with the library defaults.
 */
enum AdobiStatus adobi_sampler_params_default(struct AdobiSamplerParams *params);

/*
 Runs the reverse bridge from `z`. `maps_out` may be null when the refined
 maps are not wanted.
 */
enum AdobiStatus adobi_sample(const struct AdobiKSpace *y,
                              const struct AdobiImage *z,
                              const struct AdobiMaps *maps_initial,
                              const struct AdobiDenoiser *denoiser,
                              const struct AdobiSamplerParams *params,
                              struct AdobiImage **image_out,
                              struct AdobiMaps **maps_out);

/*
 Magnitude PSNR against the reference peak; `INFINITY` on an exact match.
 */
enum AdobiStatus adobi_psnr(const struct AdobiImage *reference,
                            const struct AdobiImage *test,
                            double *out);

/*
 Magnitude SSIM with the default window.
 */
enum AdobiStatus adobi_ssim(const struct AdobiImage *reference,
                            const struct AdobiImage *test,
                            double *out);

enum AdobiStatus adobi_image_save(const char *path, const struct AdobiImage *image);

enum AdobiStatus adobi_image_load(const char *path, struct AdobiImage **out);

enum AdobiStatus adobi_maps_save(const char *path, const struct AdobiMaps *maps);

enum AdobiStatus adobi_maps_load(const char *path, struct AdobiMaps **out);

/*
 Saves the k-space planes; the mask is not part of the file.
 */
enum AdobiStatus adobi_kspace_save(const char *path, const struct AdobiKSpace *y);

enum AdobiStatus adobi_kspace_load(const char *path,
                                   const struct AdobiMask *mask,
                                   struct AdobiKSpace **out);

enum AdobiStatus adobi_mask_save(const char *path, const struct AdobiMask *mask);

enum AdobiStatus adobi_mask_load(const char *path, struct AdobiMask **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADOBI_H */
