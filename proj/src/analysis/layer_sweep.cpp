#include "aplab/analysis.hpp"
#include "aplab/parallel.hpp"
#include "aplab/seed.hpp"

namespace aplab::analysis {

using prompting::Method;

LayerSweepResult layer_sweep(const nn::LayeredModel& model, const prompting::Dataset& train_set,
                             const prompting::Dataset& test_set, const LayerSweepConfig& cfg) {
    if (cfg.lr_grid.empty()) throw std::invalid_argument("layer_sweep: empty learning-rate grid");
    struct Job {
        Method method;
        std::string site;
        std::size_t lr_index;
    };
    // Every AP site, then the site-independent baselines.
    std::vector<std::pair<Method, std::string>> targets;
    for (const auto& s : model.site_names()) targets.emplace_back(Method::ap, s);
    if (cfg.include_baselines) {
        targets.emplace_back(Method::vp_additive, "site_0");
        targets.emplace_back(Method::norm_tune, "none");
    }
    std::vector<Job> jobs;
    for (const auto& [m, s] : targets) {
        for (std::size_t i = 0; i < cfg.lr_grid.size(); ++i) jobs.push_back({m, s, i});
    }

    const Shape input_shape = train_set.sample_shape();
    LayerSweepResult res;
    res.runs.resize(jobs.size());
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t j) {
        const Job& job = jobs[j];
        prompting::PromptSpec spec;
        spec.method = job.method;
        spec.site = job.method == Method::norm_tune ? "site_0" : job.site;
        spec.train_head = cfg.train_head;
        spec.shape_mode = job.method == Method::ap ? cfg.shape_mode : prompting::ShapeMode::full;
        prompting::Adaptation a = prompting::build_adaptation(model, spec, input_shape);
        prompting::TrainConfig tc = cfg.train;
        tc.learning_rate = cfg.lr_grid[job.lr_index];
        // Shuffling depends on the learning-rate slot only, so every site sees the same batches.
        tc.seed = job_seed(cfg.train.seed, {job.lr_index});
        SweepRun run{prompting::to_string(job.method), job.site, tc.learning_rate,
                     prompting::train(a, train_set, test_set, tc)};
        run.record.site = job.site;
        res.runs[j] = std::move(run);
    });

    for (const auto& [m, s] : targets) {
        SiteBest best{prompting::to_string(m), s, 0.0, -1.0, true};
        for (const auto& r : res.runs) {
            if (r.method != best.method || r.site != s) continue;
            if (r.record.diverged) continue;
            best.all_diverged = false;
            if (r.record.final_test_acc > best.best_test_acc) {
                best.best_test_acc = r.record.final_test_acc;
                best.best_lr = r.lr;
            }
        }
        if (best.all_diverged) best.best_test_acc = 0.0;
        res.best.push_back(best);
    }
    double top = -1.0;
    for (std::size_t i = 0; i < model.num_sites(); ++i) {
        if (res.best[i].best_test_acc > top) {
            top = res.best[i].best_test_acc;
            res.argmax_site = i;
        }
    }
    return res;
}

}  // namespace aplab::analysis
