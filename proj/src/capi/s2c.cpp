#include "s2c/s2c.h"

#include <cmath>
#include <cstring>
#include <memory>
#include <new>
#include <string>
#include <type_traits>
#include <variant>

#include "s2c/commands.hpp"
#include "s2c/error.hpp"
#include "s2c/metrics.hpp"
#include "s2c/model.hpp"
#include "s2c/raster.hpp"

struct s2c_config {
  s2c::RunConfig cfg;
};

struct s2c_raster {
  s2c::Raster raster;
  double meters_per_pixel = 10.0;
};

struct s2c_model {
  s2c::model::Model model;
};

namespace {

thread_local std::string g_last_error;

s2c_status status_of(s2c::ErrorKind k) {
  switch (k) {
    case s2c::ErrorKind::usage: return S2C_ERR_USAGE;
    case s2c::ErrorKind::io: return S2C_ERR_IO;
    case s2c::ErrorKind::format: return S2C_ERR_FORMAT;
    case s2c::ErrorKind::numeric: return S2C_ERR_NUMERIC;
    case s2c::ErrorKind::internal: return S2C_ERR_INTERNAL;
  }
  return S2C_ERR_INTERNAL;
}

s2c_status invalid(const char* what) {
  g_last_error = std::string(what) + " is null";
  return S2C_ERR_INVALID;
}

template <class F>
s2c_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return S2C_OK;
  } catch (const s2c::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return S2C_ERR_INTERNAL;
}

char* dup(const std::string& s) {
  char* p = new char[s.size() + 1];
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

}  // namespace

extern "C" {

const char* s2c_version(void) { return "1.0.0"; }

const char* s2c_status_name(s2c_status status) {
  switch (status) {
    case S2C_OK: return "ok";
    case S2C_ERR_INTERNAL: return "internal";
    case S2C_ERR_USAGE: return "usage";
    case S2C_ERR_IO: return "io";
    case S2C_ERR_NUMERIC: return "numeric";
    case S2C_ERR_FORMAT: return "format";
    case S2C_ERR_INVALID: return "invalid";
  }
  return "unknown";
}

const char* s2c_last_error(void) { return g_last_error.c_str(); }

void s2c_string_free(char* s) { delete[] s; }

size_t s2c_command_count(void) { return s2c::RunConfig::commands().size(); }

const char* s2c_command_name(size_t index) {
  const auto& c = s2c::RunConfig::commands();
  return index < c.size() ? c[index].c_str() : nullptr;
}

s2c_status s2c_command_key_count(const char* command, size_t* count) {
  if (!command) return invalid("command");
  if (!count) return invalid("count");
  return guarded([&] { *count = s2c::RunConfig::keys(command).size(); });
}

s2c_status s2c_command_key(const char* command, size_t index, const char** name, const char** default_value,
                           const char** help, int* required) {
  if (!command) return invalid("command");
  return guarded([&] {
    const auto& keys = s2c::RunConfig::keys(command);
    s2c::require(index < keys.size(), "key index out of range");
    const auto& k = keys[index];
    if (name) *name = k.name.c_str();
    if (default_value) *default_value = k.default_value.c_str();
    if (help) *help = k.help.c_str();
    if (required) *required = k.required ? 1 : 0;
  });
}

s2c_status s2c_config_create(const char* command, s2c_config** out) {
  if (!command) return invalid("command");
  if (!out) return invalid("out");
  *out = nullptr;
  return guarded([&] { *out = new s2c_config{s2c::RunConfig(command)}; });
}

void s2c_config_destroy(s2c_config* cfg) { delete cfg; }

s2c_status s2c_config_set(s2c_config* cfg, const char* key, const char* value) {
  if (!cfg) return invalid("config");
  if (!key) return invalid("key");
  if (!value) return invalid("value");
  return guarded([&] { cfg->cfg.set(key, value); });
}

s2c_status s2c_config_load(s2c_config* cfg, const char* path) {
  if (!cfg) return invalid("config");
  if (!path) return invalid("path");
  return guarded([&] { cfg->cfg.load(path); });
}

s2c_status s2c_config_get(const s2c_config* cfg, const char* key, char** value) {
  if (!cfg) return invalid("config");
  if (!key) return invalid("key");
  if (!value) return invalid("value");
  return guarded([&] { *value = dup(cfg->cfg.get(key)); });
}

s2c_status s2c_config_resolved(const s2c_config* cfg, char** text) {
  if (!cfg) return invalid("config");
  if (!text) return invalid("text");
  return guarded([&] { *text = dup(cfg->cfg.resolved()); });
}

s2c_status s2c_run(const s2c_config* cfg, s2c_log_fn log, void* user, char** result) {
  if (!cfg) return invalid("config");
  if (result) *result = nullptr;
  return guarded([&] {
    s2c::LogFn fn;
    if (log) fn = [log, user](const std::string& line) { log(line.c_str(), user); };
    const std::string text = s2c::run_command(cfg->cfg, fn);
    if (result) *result = dup(text);
  });
}

s2c_status s2c_raster_read(const char* path, s2c_raster** out) {
  if (!path) return invalid("path");
  if (!out) return invalid("out");
  *out = nullptr;
  return guarded([&] {
    auto r = std::make_unique<s2c_raster>();
    r->raster = s2c::read_tile(path, &r->meters_per_pixel);
    *out = r.release();
  });
}

s2c_status s2c_raster_write(const s2c_raster* r, const char* path) {
  if (!r) return invalid("raster");
  if (!path) return invalid("path");
  return guarded([&] { s2c::write_tile(r->raster, path, r->meters_per_pixel); });
}

s2c_status s2c_raster_create(s2c_raster_kind kind, int width, int height, int channels, const double* data,
                             double meters_per_pixel, s2c_raster** out) {
  if (!data) return invalid("data");
  if (!out) return invalid("out");
  *out = nullptr;
  return guarded([&] {
    s2c::require(width > 0 && height > 0 && channels > 0, "raster dimensions must be positive");
    s2c::require(meters_per_pixel > 0.0, "meters_per_pixel must be positive");
    const std::size_t n = static_cast<std::size_t>(width) * height * channels;
    std::vector<double> v(data, data + n);
    auto r = std::make_unique<s2c_raster>();
    r->meters_per_pixel = meters_per_pixel;
    switch (kind) {
      case S2C_MULTISPECTRAL: {
        s2c::TileMeta meta;
        meta.meters_per_pixel = meters_per_pixel;
        r->raster = s2c::MultispectralTile(width, height, channels, std::move(v), meta);
        break;
      }
      case S2C_BINARY_MASK: {
        s2c::require(channels == 1, "masks have one channel");
        std::vector<std::uint8_t> b(n);
        for (std::size_t i = 0; i < n; ++i) {
          s2c::require(v[i] == 0.0 || v[i] == 1.0, "binary mask values must be 0 or 1");
          b[i] = static_cast<std::uint8_t>(v[i]);
        }
        r->raster = s2c::BinaryMask(width, height, std::move(b));
        break;
      }
      case S2C_PROBABILITY_MASK:
        s2c::require(channels == 1, "masks have one channel");
        r->raster = s2c::ProbabilityMask(width, height, std::move(v));
        break;
      default:
        s2c::fail(s2c::ErrorKind::usage, "unknown raster kind");
    }
    *out = r.release();
  });
}

void s2c_raster_destroy(s2c_raster* r) { delete r; }

s2c_status s2c_raster_info(const s2c_raster* r, s2c_raster_kind* kind, int* width, int* height, int* channels,
                           double* meters_per_pixel) {
  if (!r) return invalid("raster");
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if (width) *width = x.width();
        if (height) *height = x.height();
        if constexpr (std::is_same_v<T, s2c::MultispectralTile>) {
          if (kind) *kind = S2C_MULTISPECTRAL;
          if (channels) *channels = x.channels();
        } else {
          if (kind) *kind = std::is_same_v<T, s2c::BinaryMask> ? S2C_BINARY_MASK : S2C_PROBABILITY_MASK;
          if (channels) *channels = 1;
        }
      },
      r->raster);
  if (meters_per_pixel) *meters_per_pixel = r->meters_per_pixel;
  g_last_error.clear();
  return S2C_OK;
}

s2c_status s2c_raster_copy_data(const s2c_raster* r, double* out, size_t count) {
  if (!r) return invalid("raster");
  if (!out) return invalid("out");
  return guarded([&] {
    std::visit(
        [&](const auto& x) {
          const auto d = x.data();
          s2c::require(count == d.size(), "buffer holds " + std::to_string(count) + " values, raster has " +
                                              std::to_string(d.size()));
          for (std::size_t i = 0; i < d.size(); ++i) out[i] = static_cast<double>(d[i]);
        },
        r->raster);
  });
}

s2c_status s2c_raster_export_pgm(const s2c_raster* r, const char* path) {
  if (!r) return invalid("raster");
  if (!path) return invalid("path");
  return guarded([&] {
    if (const auto* b = std::get_if<s2c::BinaryMask>(&r->raster)) {
      s2c::export_image(*b, path);
    } else if (const auto* p = std::get_if<s2c::ProbabilityMask>(&r->raster)) {
      s2c::export_image(*p, path);
    } else {
      s2c::fail(s2c::ErrorKind::usage, "PGM export takes a mask, not a multispectral tile");
    }
  });
}

s2c_status s2c_model_load(const char* path, s2c_model** out) {
  if (!path) return invalid("path");
  if (!out) return invalid("out");
  *out = nullptr;
  return guarded([&] { *out = new s2c_model{s2c::model::Model::load(path)}; });
}

void s2c_model_destroy(s2c_model* m) { delete m; }

s2c_status s2c_model_info(const s2c_model* m, int* kind, int* uses_points, int* in_channels) {
  if (!m) return invalid("model");
  if (kind) *kind = m->model.kind() == s2c::model::ModelKind::unet ? 0 : 1;
  if (uses_points) *uses_points = m->model.uses_points() ? 1 : 0;
  if (in_channels) *in_channels = m->model.in_channels();
  g_last_error.clear();
  return S2C_OK;
}

s2c_status s2c_model_infer(const s2c_model* m, const s2c_raster* tile, const s2c_raster* points, double threshold,
                           s2c_raster** probability, s2c_raster** mask) {
  if (!m) return invalid("model");
  if (!tile) return invalid("tile");
  if (probability) *probability = nullptr;
  if (mask) *mask = nullptr;
  return guarded([&] {
    const auto* t = std::get_if<s2c::MultispectralTile>(&tile->raster);
    s2c::require(t != nullptr, "inference input must be a multispectral tile");
    const s2c::BinaryMask* p = nullptr;
    if (points) {
      p = std::get_if<s2c::BinaryMask>(&points->raster);
      s2c::require(p != nullptr, "points must be a binary mask");
    }
    auto pred = m->model.infer(*t, p, threshold);
    auto prob = std::make_unique<s2c_raster>(s2c_raster{std::move(pred.probability), tile->meters_per_pixel});
    auto bin = std::make_unique<s2c_raster>(s2c_raster{std::move(pred.mask), tile->meters_per_pixel});
    if (probability) *probability = prob.release();
    if (mask) *mask = bin.release();
  });
}

s2c_status s2c_confusion_compute(const s2c_raster* pred, const s2c_raster* truth, s2c_confusion* out) {
  if (!pred) return invalid("pred");
  if (!truth) return invalid("truth");
  if (!out) return invalid("out");
  return guarded([&] {
    const auto* a = std::get_if<s2c::BinaryMask>(&pred->raster);
    const auto* b = std::get_if<s2c::BinaryMask>(&truth->raster);
    s2c::require(a && b, "confusion takes two binary masks");
    const auto c = s2c::confusion(*a, *b);
    *out = {c.tp, c.fp, c.tn, c.fn};
  });
}

// NaN (and s2c_last_error set) for a null or empty confusion.
double s2c_pixel_accuracy(const s2c_confusion* c) {
  double v = std::nan("");
  if (!c) return invalid("confusion"), v;
  guarded([&] { v = s2c::pixel_accuracy({c->tp, c->fp, c->tn, c->fn}); });
  return v;
}

double s2c_mean_iou(const s2c_confusion* c) {
  double v = std::nan("");
  if (!c) return invalid("confusion"), v;
  guarded([&] { v = s2c::mean_iou({c->tp, c->fp, c->tn, c->fn}); });
  return v;
}

}  // extern "C"
