/* C API for the ghostmask ghost-imaging toolkit.
 *
 * All functions return a GmStatus; results come back through out pointers.
 * Handles are opaque and must be released with the matching gm_*_free
 * (freeing NULL is a no-op). Error messages are per thread; read the most
 * recent one with gm_last_error.
 */

#ifndef GHOSTMASK_H
#define GHOSTMASK_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum GmStatus {
  GM_OK = 0,
  GM_NULL_POINTER = 1,
  GM_INVALID_ARGUMENT = 2,
  GM_DIMENSION = 3,
  GM_RANGE = 4,
  GM_DEGENERATE = 5,
  GM_TOO_LARGE = 6,
  GM_SOLVER = 7,
  GM_IO = 8,
  GM_INTERNAL = 9,
} GmStatus;

typedef enum GmMaskKind {
  GM_MASK_GAUSSIAN = 0, /* param1 = mu, param2 = sigma */
  GM_MASK_UNIFORM = 1,
  GM_MASK_BINARY = 2,
  GM_MASK_FRACTAL = 3,  /* param1 = alpha, param2 = beta */
  GM_MASK_MURA = 4,     /* param1 = prime modulus p; width/height ignored */
} GmMaskKind;

typedef enum GmPhantomKind {
  GM_PHANTOM_SIEMENS_STAR = 0,
  GM_PHANTOM_RANDOM_CIRCLE = 1,
} GmPhantomKind;

typedef enum GmSolver {
  GM_SOLVER_ADJOINT_RAW = 0,
  GM_SOLVER_ADJOINT = 1,   /* mean-corrected adjoint */
  GM_SOLVER_DGI = 2,
  GM_SOLVER_KACZMARZ = 3,  /* param1 = sweeps, param2 = lambda */
  GM_SOLVER_LANDWEBER = 4, /* param1 = iters, param2 = step */
  GM_SOLVER_PINV = 5,      /* param1 = tolerance */
} GmSolver;

typedef struct GmMaster GmMaster;
typedef struct GmPatternSet GmPatternSet;
typedef struct GmObject GmObject;

/* Copies the calling thread's last error message into buf (NUL-terminated,
 * truncated to cap bytes). Returns the full message length. */
size_t gm_last_error(char *buf, size_t cap);

/* Master masks. blur_sigma > 0 applies a periodic Gaussian blur;
 * binarize_median != 0 re-binarizes at the sample median. */
GmStatus gm_master_generate(GmMaskKind kind, size_t width, size_t height,
                            uint64_t seed, double param1, double param2,
                            double blur_sigma, int binarize_median,
                            GmMaster **out);
void gm_master_free(GmMaster *m);
GmStatus gm_master_dims(const GmMaster *m, size_t *width, size_t *height);
/* Row-major transmission field; buf must hold width*height doubles. */
GmStatus gm_master_values(const GmMaster *m, double *buf, size_t len);

/* Scanning pattern sets. Offset of pattern j is
 * (stride * (j % columns), stride * (j / columns)). */
GmStatus gm_pattern_set_extract(const GmMaster *m, size_t fov, size_t count,
                                size_t stride, size_t columns,
                                GmPatternSet **out);
void gm_pattern_set_free(GmPatternSet *s);
GmStatus gm_pattern_set_len(const GmPatternSet *s, size_t *len);

/* Test objects. */
GmStatus gm_object_phantom(GmPhantomKind kind, size_t size, uint64_t seed,
                           GmObject **out);
void gm_object_free(GmObject *o);

/* Bucket-measurement simulation. flux <= 0 disables shot noise; sigma_m is
 * the per-measurement Gaussian noise; drift_rel_sigma > 0 enables slow flux
 * drift. buckets must hold gm_pattern_set_len doubles. */
GmStatus gm_measure(const GmPatternSet *s, const GmObject *o, double flux,
                    double sigma_m, double drift_rel_sigma, uint64_t seed,
                    double *buckets, size_t len);

/* Reconstruction; image receives FOV*FOV doubles, row-major. */
GmStatus gm_solve(const GmPatternSet *s, const double *buckets,
                  size_t n_buckets, GmSolver solver, double param1,
                  double param2, double *image, size_t image_len);

/* Affine-invariant NMSE between an image buffer and an object. */
GmStatus gm_nmse(const double *image, const GmObject *o, double *out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GHOSTMASK_H */
