#include "pi/pi.h"

#include <fstream>
#include <string>

#include "pi/error.hpp"
#include "pi/pipeline.hpp"

struct pi_session {
    pi::PipelineConfig config;
    pi::RunContext context;
    std::string last_error;
    std::string buffer;
    std::string report;
};

namespace {

pi_status status_for(pi::ErrorKind kind) {
    switch (kind) {
        case pi::ErrorKind::config:
        case pi::ErrorKind::input:
        case pi::ErrorKind::dimension: return PI_ERR_VALIDATION;
        case pi::ErrorKind::io:
        case pi::ErrorKind::format:
        case pi::ErrorKind::contract: return PI_ERR_RUNTIME;
    }
    return PI_ERR_RUNTIME;
}

template <typename F>
pi_status guarded(pi_session* s, F&& body) {
    if (!s) return PI_ERR_USAGE;
    s->last_error.clear();
    try {
        return body();
    } catch (const pi::Error& e) {
        s->last_error = e.what();
        return status_for(e.kind());
    } catch (const std::bad_alloc&) {
        s->last_error = "out of memory";
    } catch (const std::exception& e) {
        s->last_error = e.what();
    }
    return PI_ERR_RUNTIME;
}

pi_status usage(pi_session* s, const std::string& msg) {
    s->last_error = "usage: " + msg;
    return PI_ERR_USAGE;
}

bool missing(const char* p) { return p == nullptr || *p == '\0'; }

std::string or_empty(const char* p) { return p ? std::string(p) : std::string(); }

}  // namespace

extern "C" {

pi_status pi_session_create(pi_session** out) {
    if (!out) return PI_ERR_USAGE;
    try {
        *out = new pi_session();
    } catch (...) {
        *out = nullptr;
        return PI_ERR_RUNTIME;
    }
    return PI_OK;
}

void pi_session_destroy(pi_session* session) { delete session; }

const char* pi_last_error(const pi_session* session) { return session ? session->last_error.c_str() : "null session"; }

const char* pi_version(void) { return pi::code_version; }

pi_status pi_load_config(pi_session* session, const char* path) {
    return guarded(session, [&] {
        const std::uint64_t seed = session->config.seed;
        session->config = path ? pi::load_config(path) : pi::PipelineConfig{};
        if (!path) session->config.seed = seed;
        return PI_OK;
    });
}

pi_status pi_set_seed(pi_session* session, uint64_t seed) {
    return guarded(session, [&] {
        session->config.seed = seed;
        return PI_OK;
    });
}

pi_status pi_set_fixed_clock(pi_session* session, int enabled) {
    return guarded(session, [&] {
        session->context.fixed_clock = enabled != 0;
        return PI_OK;
    });
}

pi_status pi_set_command_line(pi_session* session, const char* command_line) {
    return guarded(session, [&] {
        session->context.command_line = or_empty(command_line);
        return PI_OK;
    });
}

pi_status pi_set_log(pi_session* session, pi_log_fn fn, void* user) {
    return guarded(session, [&] {
        if (fn) {
            session->context.log = [fn, user](const std::string& m) { fn(m.c_str(), user); };
        } else {
            session->context.log = nullptr;
        }
        return PI_OK;
    });
}

pi_status pi_config_text(pi_session* session, const char** text) {
    return guarded(session, [&] {
        if (!text) return usage(session, "text pointer is null");
        session->buffer = pi::serialize_config(session->config);
        *text = session->buffer.c_str();
        return PI_OK;
    });
}

pi_status pi_gen_data(pi_session* session, const char* out_dir) {
    return guarded(session, [&] {
        if (missing(out_dir)) return usage(session, "gen-data needs an output directory");
        session->config.validate();
        pi::generate_data(session->config, out_dir, session->context);
        return PI_OK;
    });
}

pi_status pi_train(pi_session* session, const char* stage, const char* data_dir, const char* init,
                   const char* out_dir) {
    return guarded(session, [&] {
        if (missing(stage)) return usage(session, "train needs a stage");
        if (missing(out_dir)) return usage(session, "train needs an output directory");
        const pi::Stage s = pi::parse_stage(stage);
        if (s == pi::Stage::posthoc && missing(init)) return usage(session, "train --stage posthoc needs --init");
        session->config.validate();
        std::optional<std::filesystem::path> start;
        if (!missing(init)) start = init;
        pi::train_arm(session->config, s, or_empty(data_dir), start, out_dir, session->context);
        return PI_OK;
    });
}

pi_status pi_eval(pi_session* session, const char* checkpoint, const char* run_id, const char* data_dir,
                  const char* out_csv) {
    return guarded(session, [&] {
        if (missing(checkpoint)) return usage(session, "eval needs a checkpoint");
        if (missing(out_csv)) return usage(session, "eval needs an output path");
        const pi::Checkpoint c = pi::load_checkpoint(checkpoint);
        pi::PipelineConfig cfg = session->config;
        cfg.vision = c.params.vision;
        cfg.text = c.params.text;
        std::vector<pi::TripletRecord> val;
        if (!missing(data_dir)) val = pi::read_triplet_split(data_dir, pi::triplet_val_split);
        const auto rows = pi::evaluate_checkpoint(cfg, c.params, missing(run_id) ? "run" : run_id, val);
        pi::write_eval_csv(out_csv, rows);
        return PI_OK;
    });
}

pi_status pi_fit_scaling(pi_session* session, const char* pi_metrics, const char* base_metrics, uint64_t min_samples,
                         uint64_t max_samples, const char* out_dir) {
    return guarded(session, [&] {
        if (missing(pi_metrics) || missing(base_metrics)) return usage(session, "fit-scaling needs two metric CSVs");
        if (missing(out_dir)) return usage(session, "fit-scaling needs an output directory");
        const auto a = pi::read_metrics_csv(pi_metrics);
        const auto b = pi::read_metrics_csv(base_metrics);
        std::optional<pi::FitWindow> window;
        if (min_samples > 0 || max_samples > 0) {
            window = pi::FitWindow{min_samples, max_samples > 0 ? max_samples : UINT64_MAX};
        }
        const auto report = pi::scaling_from_metrics(a, b, window, [session](const std::string& w) {
            if (session->context.log) session->context.log("warning: " + w);
        });
        const std::filesystem::path dir(out_dir);
        pi::export_plot_data(report, dir / "points.csv", dir / "fits.csv");
        return PI_OK;
    });
}

pi_status pi_report(pi_session* session, const char* eval_csv, const char* fits_csv, const char* ours_run,
                    const char* baseline_run, const char* control_run, const char* out_md) {
    return guarded(session, [&] {
        if (missing(eval_csv)) return usage(session, "report needs an eval CSV");
        const auto rows = pi::read_eval_csv(eval_csv);
        std::vector<pi::ScalingFitRow> fits;
        if (!missing(fits_csv)) fits = pi::read_fits_csv(fits_csv);
        pi::ReportOptions opt;
        if (!missing(ours_run)) opt.ours_run = ours_run;
        if (!missing(baseline_run)) opt.baseline_run = baseline_run;
        if (!missing(control_run)) opt.control_run = std::string(control_run);
        session->report = pi::render_report(rows, fits, opt);
        if (!missing(out_md)) {
            std::ofstream out(out_md, std::ios::trunc);
            if (!out) throw pi::Error(pi::ErrorKind::io, std::string("cannot write ") + out_md);
            out << session->report;
        }
        return PI_OK;
    });
}

const char* pi_report_text(const pi_session* session) { return session ? session->report.c_str() : ""; }

pi_status pi_compare(pi_session* session, const char* out_dir) {
    return guarded(session, [&] {
        if (missing(out_dir)) return usage(session, "compare needs an output directory");
        pi::run_compare(session->config, out_dir, session->context);
        return PI_OK;
    });
}

}  // extern "C"
