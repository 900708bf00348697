#include "tinyema/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "tinyema/augment.hpp"
#include "tinyema/context.hpp"
#include "tinyema/metrics.hpp"
#include "tinyema/random.hpp"
#include "tinyema/scenegen.hpp"
#include "tinyema/stabilize.hpp"

namespace tinyema {
namespace {

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradientFloor}); }

// |x_t - b| against (1 - rho)^t |x_0 - b|, relative to |x_0 - b|.
struct LawTracker {
    double worst = 0.0;
    void check(double x, double x0, double b, double rho, int t) {
        const double expected = std::pow(1.0 - rho, t) * std::abs(x0 - b);
        worst = std::max(worst, std::abs(std::abs(x - b) - expected) / std::abs(x0 - b));
    }
};

CheckResult check_ema_law(Rng& rng) {
    LawTracker law;
    const int steps = 200;
    for (int trial = 0; trial < 20; ++trial) {
        const double rho = rng.uniform(0.01, 0.1);
        const double x0 = rng.uniform(-1.0, 1.0);
        const double b = x0 + rng.uniform(0.5, 2.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);

        EmaScalarPair aug(rho);
        aug.observe({x0, std::abs(x0)});
        StabilizerState es(2, rho, 1.0, 30.0);
        ContextState cx(2, rho, 0.5);
        auto batch = [](double v) { return std::vector<Embedding>{{{v, -v}, {5.0, 5.0}}}; };
        auto groups = [](const std::vector<Embedding>& e) { return group_embeddings(e, 30.0); };
        {
            const auto e = batch(x0);
            const auto g = groups(e);
            update_cluster_means(g, e, es);
            update_global_mean(e, es);
            update_stack(g, e, es);
            update_context_ref(std::vector<Vec>{{x0, -x0}}, cx);
        }
        const double sb = std::abs(x0) + std::abs(b - x0);
        for (int t = 1; t <= steps; ++t) {
            aug.observe({b, sb});
            const auto e = batch(b);
            const auto g = groups(e);
            update_cluster_means(g, e, es);
            update_global_mean(e, es);
            update_stack(g, e, es);
            update_context_ref(std::vector<Vec>{{b, -b}}, cx);
            law.check(aug.mu_ref, x0, b, rho, t);
            law.check(aug.sigma_ref, std::abs(x0), sb, rho, t);
            law.check(es.cluster_means.begin()->second[0], x0, b, rho, t);
            law.check(es.global_mean[1], -x0, -b, rho, t);
            law.check(es.stacks.begin()->second[0], x0, b, rho, t);
            law.check(cx.ref[0], x0, b, rho, t);
        }
    }
    return {"ema_law", law.worst < 1e-12, fmt("max relative deviation %.3g over 200 steps", law.worst)};
}

CheckResult check_identity_augmentation(Rng& rng) {
    bool identical = true;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<ImageBuffer> batch;
        for (int i = 0; i < 3; ++i) {
            ImageBuffer img(16, 12);
            for (double& v : img.pixels()) v = rng.uniform();
            batch.push_back(std::move(img));
        }
        // A batch whose statistics equal the reference: every image identical.
        std::vector<ImageBuffer> same(3, batch[0]);
        EmaScalarPair fixed(0.05);
        fixed.observe(batch_stats(same));
        const AugmentedBatch out = augment_batch(same, fixed, AugGains{}, NoiseSeed{rng.below(1000)});
        for (std::size_t i = 0; i < same.size(); ++i) identical = identical && out.images[i] == same[i];
        identical = identical && out.state == fixed;
    }
    return {"identity_augmentation", identical, identical ? "bitwise identical" : "augmented output differs"};
}

CheckResult check_loss_gradients(Rng& rng) {
    double worst = 0.0;
    const double h = 1e-4;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t dim = 1 + rng.below(6);
        const std::size_t n = 1 + rng.below(8);
        std::vector<Embedding> emb(n);
        for (auto& e : emb) {
            e.vector.resize(dim);
            for (double& v : e.vector) v = rng.uniform(-1.0, 1.0);
            e.center = {rng.uniform(0.0, 60.0), rng.uniform(0.0, 60.0)};
        }
        StabilizerState st(dim, 0.1, rng.uniform(0.5, 2.0), 20.0);
        const auto groups = group_embeddings(emb, st.delta);
        std::vector<Embedding> shifted = emb;
        for (auto& e : shifted) {
            for (double& v : e.vector) v += rng.uniform(-0.5, 0.5);
        }
        update_cluster_means(groups, shifted, st);
        update_global_mean(shifted, st);
        update_stack(groups, shifted, st);

        std::vector<Vec> ctx(n, Vec(dim));
        for (auto& c : ctx) {
            for (double& v : c) v = rng.uniform(-1.0, 1.0);
        }
        ContextState cs(dim, 0.1, 0.5);
        update_context_ref(std::vector<Vec>{Vec(dim, 0.3)}, cs);

        const LossWithGrad cl = cluster_loss(groups, emb, st);
        const LossWithGrad sl = stack_loss(groups, emb, st);
        const LossWithGrad xl = context_loss(ctx, cs);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < dim; ++d) {
                auto probe = [&](auto&& loss, auto& items, auto get) {
                    double& v = get(items[i])[d];
                    const double orig = v;
                    v = orig + h;
                    const double up = loss();
                    v = orig - h;
                    const double down = loss();
                    v = orig;
                    return (up - down) / (2.0 * h);
                };
                auto vec_of = [](Embedding& e) -> Vec& { return e.vector; };
                auto self = [](Vec& v) -> Vec& { return v; };
                worst = std::max(worst, rel_error(cl.grad[i][d], probe([&] { return cluster_loss(groups, emb, st).value; }, emb, vec_of)));
                worst = std::max(worst, rel_error(sl.grad[i][d], probe([&] { return stack_loss(groups, emb, st).value; }, emb, vec_of)));
                worst = std::max(worst, rel_error(xl.grad[i][d], probe([&] { return context_loss(ctx, cs).value; }, ctx, self)));
            }
        }
    }
    return {"loss_gradients", worst < 1e-4, fmt("max relative error %.3g over 50 instances", worst)};
}

CheckResult check_total_gradient(Rng& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const ComponentSet all{true, true, true};
        const auto inst = make_tiny_instance(rng.below(1u << 30), all);
        worst = std::max(worst, check_total_loss_gradient(*inst).max_rel_error);
    }
    return {"total_loss_gradient", worst < 1e-3, fmt("max relative error %.3g over 50 instances", worst)};
}

std::vector<std::vector<std::size_t>> oracle_components(std::span<const Embedding> e, double delta) {
    const std::size_t n = e.size();
    std::vector<int> label(n, -1);
    int next = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (label[s] >= 0) continue;
        std::vector<std::size_t> stack{s};
        label[s] = next;
        while (!stack.empty()) {
            const std::size_t a = stack.back();
            stack.pop_back();
            for (std::size_t b = 0; b < n; ++b) {
                if (label[b] >= 0) continue;
                if (std::hypot(e[a].center.x - e[b].center.x, e[a].center.y - e[b].center.y) < delta) {
                    label[b] = next;
                    stack.push_back(b);
                }
            }
        }
        ++next;
    }
    std::vector<std::vector<std::size_t>> comps(static_cast<std::size_t>(next));
    for (std::size_t i = 0; i < n; ++i) comps[static_cast<std::size_t>(label[i])].push_back(i);
    return comps;
}

CheckResult check_grouping(Rng& rng) {
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = rng.below(13);
        std::vector<Embedding> e(n);
        for (auto& x : e) x.center = {rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0)};
        const double delta = rng.uniform(5.0, 40.0);
        const auto groups = group_embeddings(e, delta);
        const auto oracle = oracle_components(e, delta);
        bool same = groups.size() == oracle.size();
        for (std::size_t g = 0; same && g < groups.size(); ++g) same = groups[g].members == oracle[g];
        if (!same) ++mismatches;
    }
    return {"grouping_oracle", mismatches == 0, fmt("%.0f mismatches in 1000 instances", mismatches)};
}

// Precision and recall at every confidence threshold by re-matching the
// surviving predictions, then all-point interpolation.
double oracle_ap(std::span<const Detection> preds, std::span<const Point2> gts, double tol) {
    std::vector<double> thresholds;
    for (const auto& p : preds) thresholds.push_back(p.confidence);
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    std::vector<std::pair<double, double>> pts;  // recall, precision
    for (double t : thresholds) {
        std::vector<Detection> kept;
        for (const auto& p : preds) {
            if (p.confidence >= t) kept.push_back(p);
        }
        const MatchResult m = match_detections(kept, gts, tol);
        pts.emplace_back(static_cast<double>(m.true_positives) / static_cast<double>(gts.size()),
                         static_cast<double>(m.true_positives) / static_cast<double>(kept.size()));
    }
    double ap = 0.0;
    double prev = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double best = 0.0;
        for (std::size_t j = i; j < pts.size(); ++j) best = std::max(best, pts[j].second);
        ap += (pts[i].first - prev) * best;
        prev = pts[i].first;
    }
    return ap;
}

CheckResult check_ap(Rng& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n_gt = 1 + rng.below(5);
        const std::size_t n_pred = rng.below(7);
        std::vector<Point2> gts(n_gt);
        for (auto& g : gts) g = {rng.uniform(0.0, 30.0), rng.uniform(0.0, 30.0)};
        std::vector<Detection> preds(n_pred);
        for (auto& p : preds) {
            const Point2& near = gts[rng.below(n_gt)];
            p.center = {near.x + rng.uniform(-8.0, 8.0), near.y + rng.uniform(-8.0, 8.0)};
            p.confidence = rng.uniform();
        }
        const double got = average_precision(preds, gts, 6.0);
        worst = std::max(worst, std::abs(got - oracle_ap(preds, gts, 6.0)));
    }
    return {"ap_oracle", worst < 1e-12, fmt("max abs difference %.3g over 1000 trials", worst)};
}

}  // namespace

GradientReport compare_gradient(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                                std::span<const double> analytic, double h) {
    GradientReport r;
    std::vector<double> probe(x.begin(), x.end());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = f(probe);
        probe[i] = orig - h;
        const double down = f(probe);
        probe[i] = orig;
        r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], (up - down) / (2.0 * h)));
        ++r.components;
    }
    return r;
}

std::unique_ptr<TinyInstance> make_tiny_instance(std::uint64_t seed, ComponentSet components) {
    auto inst = std::make_unique<TinyInstance>();
    Rng rng(seed);
    SceneSpec spec;
    spec.width = 64;
    spec.height = 64;
    spec.n_objects = static_cast<int>(1 + rng.below(10));
    spec.min_separation = 8.0;
    spec.texture = {0.1, 16.0, 2};
    spec.illumination = {0.1, rng.uniform(0.0, 6.0)};
    spec.sensor_noise = 0.01;
    spec.seed = rng.below(1u << 30);
    const Scene scene = generate_scene(spec);

    TrainConfig& c = inst->config;
    c.components = components;
    c.embedding_dim = 6;
    c.seed = seed;
    inst->grids.push_back(compute_descriptors(scene.image, c.patch_size));
    std::vector<ObjectRecord> objects;
    std::vector<BBox> boxes;
    for (const auto& a : scene.annotations) {
        objects.push_back({a.center.x, a.center.y, a.box.w, a.box.h});
        boxes.push_back(expand_box(a.box, c.gamma, spec.width, spec.height));
    }
    inst->targets.push_back(make_targets(inst->grids[0], objects));

    inst->params = ModelParams::initialize(kDescriptorSize, c.embedding_dim, c.context_dim(), rng.below(1u << 30));
    // Perturb every block so no gradient component is trivially zero.
    for (Vec* b : inst->params.blocks()) {
        for (double& v : *b) v += 0.2 * rng.normal();
    }
    const PatchGrid* fit[] = {&inst->grids[0]};
    fit_descriptor_scaler(inst->params, fit);
    inst->states = ModelStates::fresh(c);

    TrainingSample s;
    s.grid = &inst->grids[0];
    s.targets = &inst->targets[0];
    s.context_boxes = boxes;
    inst->samples.push_back(std::move(s));

    // Seed the states from a slightly different forward pass so embeddings
    // do not sit exactly on their targets.
    ModelParams warm = inst->params;
    for (double& v : warm.proj) v += 0.1 * rng.normal();
    update_states(forward(warm, inst->samples, c), inst->states, c);
    return inst;
}

GradientReport check_total_loss_gradient(const TinyInstance& inst, double h) {
    const LossResult base = total_loss(inst.params, inst.samples, inst.states, inst.config);
    GradientReport worst;
    ModelParams probe = inst.params;
    auto pb = probe.blocks();
    const auto gb = base.grad.blocks();
    for (std::size_t b = 0; b < pb.size(); ++b) {
        Vec& block = *pb[b];
        const Vec saved = block;
        const auto f = [&](std::span<const double> x) {
            std::copy(x.begin(), x.end(), block.begin());
            return total_loss(probe, inst.samples, inst.states, inst.config).breakdown.total;
        };
        const GradientReport r = compare_gradient(f, saved, *gb[b], h);
        block = saved;
        worst.max_rel_error = std::max(worst.max_rel_error, r.max_rel_error);
        worst.components += r.components;
    }
    return worst;
}

std::vector<CheckResult> run_selftest(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CheckResult> out;
    out.push_back(check_ema_law(rng));
    out.push_back(check_identity_augmentation(rng));
    out.push_back(check_loss_gradients(rng));
    out.push_back(check_total_gradient(rng));
    out.push_back(check_grouping(rng));
    out.push_back(check_ap(rng));
    return out;
}

}  // namespace tinyema
