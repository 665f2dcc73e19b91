#include "ctalab.h"

#include <filesystem>
#include <string>

#include "core/cache.hpp"
#include "core/config.hpp"
#include "core/runner.hpp"

using namespace ctalab;

struct ctl_experiment {
  Config cfg;
  RunOptions opts;
  std::string last_error;
  std::string manifest;
};

namespace {

thread_local std::string g_create_error;

ctl_status status_from(int code) {
  switch (code) {
    case 0: return CTL_OK;
    case 2: return CTL_ERROR_CONFIG;
    case 3: return CTL_ERROR_NUMERIC;
    case 4: return CTL_ERROR_THRESHOLD;
    default: return CTL_ERROR_USAGE;
  }
}

template <typename Fn>
ctl_status guarded(std::string* sink, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (sink) *sink = e.what();
    return e.kind() == ErrorKind::Config ? CTL_ERROR_CONFIG : CTL_ERROR_NUMERIC;
  } catch (const std::exception& e) {
    if (sink) *sink = e.what();
    return CTL_ERROR_NUMERIC;
  }
}

}  // namespace

extern "C" {

const char* ctl_version(void) { return "cta-lab 1.0.0"; }

ctl_status ctl_experiment_create_from_file(const char* path, ctl_experiment** out) {
  if (!path || !out) {
    g_create_error = "null argument";
    return CTL_ERROR_USAGE;
  }
  return guarded(&g_create_error, [&]() {
    auto* exp = new ctl_experiment();
    exp->cfg = Config::parse_file(path);
    *out = exp;
    return CTL_OK;
  });
}

ctl_status ctl_experiment_create_from_string(const char* text, ctl_experiment** out) {
  if (!text || !out) {
    g_create_error = "null argument";
    return CTL_ERROR_USAGE;
  }
  return guarded(&g_create_error, [&]() {
    auto* exp = new ctl_experiment();
    exp->cfg = Config::parse_string(text, "<string>");
    *out = exp;
    return CTL_OK;
  });
}

void ctl_experiment_destroy(ctl_experiment* exp) { delete exp; }

ctl_status ctl_experiment_set_output_dir(ctl_experiment* exp, const char* dir) {
  if (!exp || !dir) return CTL_ERROR_USAGE;
  exp->opts.out_dir = dir;
  return CTL_OK;
}

ctl_status ctl_experiment_set_jobs(ctl_experiment* exp, int jobs) {
  if (!exp || jobs < 1) return CTL_ERROR_USAGE;
  exp->opts.jobs = jobs;
  return CTL_OK;
}

ctl_status ctl_experiment_set_seed(ctl_experiment* exp, uint64_t seed) {
  if (!exp) return CTL_ERROR_USAGE;
  exp->opts.seed = seed;
  return CTL_OK;
}

ctl_status ctl_experiment_run(ctl_experiment* exp, const char* subcommand) {
  if (!exp || !subcommand) return CTL_ERROR_USAGE;
  exp->last_error.clear();
  return guarded(&exp->last_error, [&]() {
    int rc = run_subcommand(subcommand, exp->cfg, exp->opts, &exp->last_error);
    if (rc == 0) {
      try {
        exp->manifest = read_file(
            (std::filesystem::path(exp->opts.out_dir) / "manifest.json").string());
      } catch (const Error&) {
        exp->manifest.clear();
      }
    }
    return status_from(rc);
  });
}

const char* ctl_last_error(const ctl_experiment* exp) {
  return exp ? exp->last_error.c_str() : g_create_error.c_str();
}

const char* ctl_manifest_json(const ctl_experiment* exp) {
  return exp ? exp->manifest.c_str() : "";
}

const char* ctl_known_subcommands(void) { return known_subcommands(); }

}  // extern "C"
