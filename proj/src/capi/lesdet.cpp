#include "lesdet/lesdet.h"

#include <exception>
#include <filesystem>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "lesdet/config.hpp"
#include "lesdet/error.hpp"
#include "lesdet/eval.hpp"
#include "lesdet/les.hpp"
#include "lesdet/pipeline.hpp"

struct lesdet_experiment {
  std::unique_ptr<lesdet::Pipeline> pipeline;
  std::string config_json;
  lesdet_log_fn log_fn = nullptr;
  void* log_user = nullptr;
};

struct lesdet_detector {
  lesdet::DetectorArtifact artifact;
};

namespace {

thread_local std::string g_last_error;

lesdet_status status_of(lesdet::ErrorKind k) {
  using lesdet::ErrorKind;
  switch (k) {
    case ErrorKind::InvalidArgument: return LESDET_ERR_INVALID_ARGUMENT;
    case ErrorKind::Config: return LESDET_ERR_CONFIG;
    case ErrorKind::Io: return LESDET_ERR_IO;
    case ErrorKind::Format: return LESDET_ERR_FORMAT;
    case ErrorKind::Shape: return LESDET_ERR_SHAPE;
    case ErrorKind::Mismatch: return LESDET_ERR_MISMATCH;
    case ErrorKind::State: return LESDET_ERR_STATE;
  }
  return LESDET_ERR_INTERNAL;
}

lesdet_status fail(lesdet_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
lesdet_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return LESDET_OK;
  } catch (const lesdet::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(LESDET_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(LESDET_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(LESDET_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(LESDET_ERR_INTERNAL, "unknown exception");
  }
}

void require(const void* p, const char* what) {
  if (!p) throw lesdet::InvalidArgument(std::string(what) + " is NULL");
}

}  // namespace

extern "C" {

const char* lesdet_version(void) { return "1.0.0"; }

const char* lesdet_status_name(lesdet_status s) {
  switch (s) {
    case LESDET_OK: return "ok";
    case LESDET_ERR_INTERNAL: return "internal";
    case LESDET_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case LESDET_ERR_CONFIG: return "config";
    case LESDET_ERR_IO: return "io";
    case LESDET_ERR_FORMAT: return "format";
    case LESDET_ERR_SHAPE: return "shape";
    case LESDET_ERR_MISMATCH: return "mismatch";
    case LESDET_ERR_STATE: return "state";
  }
  return "unknown";
}

const char* lesdet_last_error(void) { return g_last_error.c_str(); }

lesdet_status lesdet_experiment_open(const char* config_path, int override_seed, uint64_t seed,
                                     const char* out_dir, const char* data_root,
                                     lesdet_experiment** out) {
  return guarded([&] {
    require(config_path, "config_path");
    require(out_dir, "out_dir");
    require(out, "out");
    *out = nullptr;
    lesdet::ExperimentConfig cfg = lesdet::load_config(config_path);
    if (override_seed) cfg.seed = seed;
    auto e = std::make_unique<lesdet_experiment>();
    e->config_json = lesdet::config_to_json(cfg).dump();
    lesdet_experiment* raw = e.get();
    auto logger = [raw](const std::string& msg) {
      if (raw->log_fn) raw->log_fn(msg.c_str(), raw->log_user);
    };
    const std::filesystem::path root = data_root ? std::filesystem::path(data_root) : lesdet::data_root();
    e->pipeline = std::make_unique<lesdet::Pipeline>(std::move(cfg), out_dir, root, logger);
    *out = e.release();
  });
}

void lesdet_experiment_free(lesdet_experiment* e) { delete e; }

void lesdet_experiment_set_log(lesdet_experiment* e, lesdet_log_fn fn, void* user) {
  if (!e) return;
  e->log_fn = fn;
  e->log_user = user;
}

const char* lesdet_experiment_config_hash(const lesdet_experiment* e) {
  return e ? e->pipeline->config_hash().c_str() : "";
}

const char* lesdet_experiment_config_json(const lesdet_experiment* e) {
  return e ? e->config_json.c_str() : "";
}

lesdet_status lesdet_train_substitute(lesdet_experiment* e, const char* name) {
  return guarded([&] {
    require(e, "experiment");
    e->pipeline->train_substitutes(name ? name : "");
  });
}

lesdet_status lesdet_gen_attacks(lesdet_experiment* e) {
  return guarded([&] {
    require(e, "experiment");
    e->pipeline->gen_attacks();
  });
}

lesdet_status lesdet_train_detector(lesdet_experiment* e) {
  return guarded([&] {
    require(e, "experiment");
    e->pipeline->train_detector();
  });
}

lesdet_status lesdet_calibrate(lesdet_experiment* e) {
  return guarded([&] {
    require(e, "experiment");
    e->pipeline->calibrate();
  });
}

lesdet_status lesdet_evaluate(lesdet_experiment* e, const char* suite) {
  return guarded([&] {
    require(e, "experiment");
    e->pipeline->evaluate(suite ? suite : "grid");
  });
}

lesdet_status lesdet_transfer(lesdet_experiment* e) {
  return guarded([&] {
    require(e, "experiment");
    e->pipeline->transfer();
  });
}

lesdet_status lesdet_lipschitz(lesdet_experiment* e) {
  return guarded([&] {
    require(e, "experiment");
    e->pipeline->lipschitz();
  });
}

lesdet_status lesdet_report(lesdet_experiment* e, const char* const* inputs, size_t n) {
  return guarded([&] {
    require(e, "experiment");
    if (n > 0) require(inputs, "inputs");
    std::vector<std::filesystem::path> files;
    for (size_t i = 0; i < n; ++i) {
      require(inputs[i], "input path");
      files.emplace_back(inputs[i]);
    }
    e->pipeline->report(files);
  });
}

lesdet_status lesdet_detector_load(const char* artifact_path, lesdet_detector** out) {
  return guarded([&] {
    require(artifact_path, "artifact_path");
    require(out, "out");
    *out = nullptr;
    *out = new lesdet_detector{lesdet::load_artifact(artifact_path)};
  });
}

void lesdet_detector_free(lesdet_detector* d) { delete d; }

lesdet_status lesdet_detector_threshold(const lesdet_detector* d, double* threshold) {
  return guarded([&] {
    require(d, "detector");
    require(threshold, "threshold");
    *threshold = d->artifact.threshold;
  });
}

lesdet_status lesdet_detector_input_shape(const lesdet_detector* d, size_t* c, size_t* h, size_t* w) {
  return guarded([&] {
    require(d, "detector");
    require(c, "c");
    require(h, "h");
    require(w, "w");
    const lesdet::Shape& s = d->artifact.detector.input_shape();
    *c = s.at(0);
    *h = s.at(1);
    *w = s.at(2);
  });
}

lesdet_status lesdet_detector_score(const lesdet_detector* d, const float* image, size_t c, size_t h,
                                    size_t w, double* energy, int* adversarial) {
  return guarded([&] {
    require(d, "detector");
    require(image, "image");
    require(energy, "energy");
    require(adversarial, "adversarial");
    const lesdet::Shape shape{c, h, w};
    if (shape != d->artifact.detector.input_shape()) {
      throw lesdet::ShapeError("image shape does not match the detector input");
    }
    lesdet::Tensor x(shape, std::vector<float>(image, image + c * h * w));
    const lesdet::Detection r = lesdet::detect(d->artifact, x);
    *energy = r.energy;
    *adversarial = r.adversarial ? 1 : 0;
  });
}

lesdet_status lesdet_roc_auc(const double* natural, size_t n_natural, const double* adversarial,
                             size_t n_adversarial, double* auc) {
  return guarded([&] {
    require(auc, "auc");
    if (n_natural > 0) require(natural, "natural");
    if (n_adversarial > 0) require(adversarial, "adversarial");
    *auc = lesdet::roc_auc(std::span<const double>(natural, n_natural),
                           std::span<const double>(adversarial, n_adversarial));
  });
}

}  // extern "C"
