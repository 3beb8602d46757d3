#ifndef S2C_H
#define S2C_H

/* C interface to the water segmentation pipeline. Every call that can fail
   returns an s2c_status; s2c_last_error() then holds a one-line message for
   the calling thread. Handles are opaque and owned by the caller. */

#include <stddef.h>
#include <stdint.h>

#if defined(S2C_BUILDING)
#define S2C_API __attribute__((visibility("default")))
#else
#define S2C_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum s2c_status {
  S2C_OK = 0,
  S2C_ERR_INTERNAL = 1,
  S2C_ERR_USAGE = 2,    /* bad argument or configuration */
  S2C_ERR_IO = 3,
  S2C_ERR_NUMERIC = 4,  /* NaN/Inf, failed gradient check */
  S2C_ERR_FORMAT = 5,   /* malformed file contents */
  S2C_ERR_INVALID = 6   /* null handle or pointer */
} s2c_status;

typedef enum s2c_raster_kind {
  S2C_MULTISPECTRAL = 0,
  S2C_BINARY_MASK = 1,
  S2C_PROBABILITY_MASK = 2
} s2c_raster_kind;

typedef struct s2c_config s2c_config;
typedef struct s2c_raster s2c_raster;
typedef struct s2c_model s2c_model;

typedef struct s2c_confusion {
  uint64_t tp, fp, tn, fn;
} s2c_confusion;

typedef void (*s2c_log_fn)(const char* line, void* user);

S2C_API const char* s2c_version(void);
S2C_API const char* s2c_status_name(s2c_status status);
/* Message of the last failed call on this thread; "" if none. */
S2C_API const char* s2c_last_error(void);
/* Frees strings returned through char** out-parameters. */
S2C_API void s2c_string_free(char* s);

/* Commands and their configuration keys. */
S2C_API size_t s2c_command_count(void);
S2C_API const char* s2c_command_name(size_t index);
S2C_API s2c_status s2c_command_key_count(const char* command, size_t* count);
/* Borrowed strings, valid for the life of the process. default_value is ""
   when the key has none. */
S2C_API s2c_status s2c_command_key(const char* command, size_t index, const char** name,
                                   const char** default_value, const char** help, int* required);

S2C_API s2c_status s2c_config_create(const char* command, s2c_config** out);
S2C_API void s2c_config_destroy(s2c_config* cfg);
S2C_API s2c_status s2c_config_set(s2c_config* cfg, const char* key, const char* value);
/* key=value file; keys set afterwards override it. */
S2C_API s2c_status s2c_config_load(s2c_config* cfg, const char* path);
S2C_API s2c_status s2c_config_get(const s2c_config* cfg, const char* key, char** value);
S2C_API s2c_status s2c_config_resolved(const s2c_config* cfg, char** text);

/* Runs the configured command. Progress lines go to `log` when non-null;
   `result` (optional) receives the command's summary text. */
S2C_API s2c_status s2c_run(const s2c_config* cfg, s2c_log_fn log, void* user, char** result);

S2C_API s2c_status s2c_raster_read(const char* path, s2c_raster** out);
S2C_API s2c_status s2c_raster_write(const s2c_raster* r, const char* path);
/* data holds channels*height*width values, channel-major; masks have one
   channel and binary masks take 0/1 values. */
S2C_API s2c_status s2c_raster_create(s2c_raster_kind kind, int width, int height, int channels,
                                     const double* data, double meters_per_pixel, s2c_raster** out);
S2C_API void s2c_raster_destroy(s2c_raster* r);
S2C_API s2c_status s2c_raster_info(const s2c_raster* r, s2c_raster_kind* kind, int* width, int* height,
                                   int* channels, double* meters_per_pixel);
S2C_API s2c_status s2c_raster_copy_data(const s2c_raster* r, double* out, size_t count);
/* Masks only. */
S2C_API s2c_status s2c_raster_export_pgm(const s2c_raster* r, const char* path);

S2C_API s2c_status s2c_model_load(const char* path, s2c_model** out);
S2C_API void s2c_model_destroy(s2c_model* m);
/* 0 = unet, 1 = refiner. */
S2C_API s2c_status s2c_model_info(const s2c_model* m, int* kind, int* uses_points, int* in_channels);
/* points: binary mask or NULL. Either output may be NULL. */
S2C_API s2c_status s2c_model_infer(const s2c_model* m, const s2c_raster* tile, const s2c_raster* points,
                                   double threshold, s2c_raster** probability, s2c_raster** mask);

S2C_API s2c_status s2c_confusion_compute(const s2c_raster* pred, const s2c_raster* truth, s2c_confusion* out);
/* NaN with s2c_last_error set when c is null or empty. */
S2C_API double s2c_pixel_accuracy(const s2c_confusion* c);
S2C_API double s2c_mean_iou(const s2c_confusion* c);

#ifdef __cplusplus
}
#endif

#endif
