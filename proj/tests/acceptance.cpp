// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion is self-contained and runs at its pinned tolerance.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cb/gradcheck.hpp"
#include "cb/ops.hpp"
#include "cb/train.hpp"
#include "oracles.hpp"

using namespace cb;

namespace {

struct Failure {
    std::string message;
};

void require(bool cond, const std::string& message) {
    if (!cond) throw Failure{message};
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// ---- criterion 1: metric arithmetic against the published numbers ----
void criterion_metric_arithmetic(std::string& detail) {
    double f = f_score(0.8353, 0.93);
    require(std::abs(f - 0.880) <= 0.001,
            "f_score(0.8353, 0.93) = " + fmt(f) + ", expected 0.880 +- 0.001");
    double r = recall(93, 7);
    require(r == 0.93, "recall(93, 7) = " + fmt(r) + ", expected exactly 0.93");
    detail = "f_score(0.8353,0.93)=" + fmt(f) + ", recall(93,7)=" + fmt(r);
}

// ---- criterion 2: finite-difference gradient checks for every block ----
void criterion_gradcheck(std::string& detail) {
    auto reports = run_gradcheck_suite(7);
    require(!reports.empty(), "gradient-check suite produced no reports");
    int failed = 0;
    double worst = 0;
    std::string worst_name;
    for (const GradCheckReport& rep : reports) {
        if (rep.max_relative_error > worst) {
            worst = rep.max_relative_error;
            worst_name = rep.parameter_name;
        }
        if (!rep.passed) ++failed;
    }
    require(failed == 0, std::to_string(failed) + " of " + std::to_string(reports.size()) +
                             " gradient checks exceeded 1e-4 (worst: " + worst_name + " at " +
                             fmt(worst) + ")");
    detail = std::to_string(reports.size()) + " checks, worst rel err " + fmt(worst) + " (" +
             worst_name + ")";
}

// ---- criterion 3: oracle equivalences ----
void criterion_oracles(std::string& detail) {
    std::mt19937_64 rng(1234);

    // roi_align vs brute-force bilinear oracle, 50 random boxes
    {
        Tensor feat = Tensor::from_data({4, 16, 16}, oracle::rand_vec(rng, 4 * 256));
        std::uniform_real_distribution<double> pos(0.0, 40.0), sz(4.0, 28.0);
        double worst = 0;
        for (int t = 0; t < 50; ++t) {
            double x1 = pos(rng), y1 = pos(rng);
            std::array<double, 4> box{x1, y1, x1 + sz(rng), y1 + sz(rng)};
            Tensor got = roi_align(feat, {box}, 7, 7, 2, 0.25);
            auto want = oracle::roi_align_brute(feat.values(), 4, 16, 16, box, 0.25, 7, 7, 2);
            for (long long i = 0; i < got.numel(); ++i)
                worst = std::max(worst, std::abs(got.data()[i] - want[static_cast<size_t>(i)]));
        }
        require(worst <= 1e-6, "roi_align vs oracle: worst deviation " + fmt(worst) + " > 1e-6");
        detail += "roi_align " + fmt(worst);
    }
    // nms vs quadratic oracle, 100 random sets
    {
        std::uniform_real_distribution<double> score(0.0, 1.0), pos(0.0, 100.0), sz(4.0, 40.0);
        for (int t = 0; t < 100; ++t) {
            int n = 1 + static_cast<int>(rng() % 80);
            std::vector<Box> boxes;
            std::vector<std::array<double, 4>> raw;
            std::vector<double> scores;
            for (int i = 0; i < n; ++i) {
                double x1 = pos(rng), y1 = pos(rng), w = sz(rng), h = sz(rng);
                boxes.push_back({x1, y1, x1 + w, y1 + h});
                raw.push_back({x1, y1, x1 + w, y1 + h});
                scores.push_back(score(rng));
            }
            double thr = 0.2 + 0.6 * score(rng);
            require(nms(boxes, scores, thr) == oracle::nms_quadratic(raw, scores, thr),
                    "nms disagreed with the quadratic oracle on set " + std::to_string(t));
        }
        detail += "; nms exact";
    }
    // anchor generation vs enumeration oracle
    {
        for (int t = 0; t < 20; ++t) {
            int h = 1 + static_cast<int>(rng() % 10), w = 1 + static_cast<int>(rng() % 10);
            int stride = 1 << (rng() % 6);
            auto scales = oracle::rand_vec(rng, 1 + rng() % 3, 4.0, 64.0);
            auto ratios = oracle::rand_vec(rng, 1 + rng() % 3, 0.4, 2.5);
            AnchorSet set = generate_anchors({{h, w, stride}}, scales, ratios);
            auto want = oracle::anchors_enumerated(h, w, stride, scales, ratios);
            require(set.levels[0].anchors.size() == want.size(), "anchor count mismatch");
            for (size_t i = 0; i < want.size(); ++i) {
                const Box& b = set.levels[0].anchors[i];
                require(b.x1 == want[i][0] && b.y1 == want[i][1] && b.x2 == want[i][2] &&
                            b.y2 == want[i][3],
                        "anchor " + std::to_string(i) + " differs from the enumeration oracle");
            }
        }
        detail += "; anchors exact";
    }
    // spatial-reduction attention with reduction 1 vs dense attention
    {
        ParamStore ps(77);
        SraBlock block(ps, "sra", 6, 2, 1);
        Tensor tokens = Tensor::from_data({20, 6}, oracle::rand_vec(rng, 120));
        Tensor got = block.attention(tokens, 4, 5);
        oracle::DenseAttentionParams p;
        p.heads = 2;
        p.wq = block.wq.w.values();
        p.bq = block.wq.b.values();
        p.wk = block.wk.w.values();
        p.bk = block.wk.b.values();
        p.wv = block.wv.w.values();
        p.bv = block.wv.b.values();
        p.wo = block.wo.w.values();
        p.bo = block.wo.b.values();
        auto want = oracle::dense_attention(tokens.values(), 20, 6, p);
        double worst = 0;
        for (long long i = 0; i < got.numel(); ++i)
            worst = std::max(worst, std::abs(got.data()[i] - want[static_cast<size_t>(i)]));
        require(worst <= 1e-6, "reduction-1 attention vs dense oracle: " + fmt(worst) + " > 1e-6");
        detail += "; attention " + fmt(worst);
    }
    // encode/decode round trip
    {
        std::uniform_real_distribution<double> pos(0.0, 216.0), sz(4.0, 40.0);
        double worst = 0;
        for (int t = 0; t < 300; ++t) {
            Box anchor{pos(rng), pos(rng), 0, 0};
            anchor.x2 = anchor.x1 + sz(rng);
            anchor.y2 = anchor.y1 + sz(rng);
            Box gt{pos(rng), pos(rng), 0, 0};
            gt.x2 = gt.x1 + sz(rng);
            gt.y2 = gt.y1 + sz(rng);
            Box back = decode_box(anchor, encode_box(anchor, gt), 256, 256);
            worst = std::max({worst, std::abs(back.x1 - gt.x1), std::abs(back.y1 - gt.y1),
                              std::abs(back.x2 - gt.x2), std::abs(back.y2 - gt.y2)});
        }
        require(worst <= 1e-5, "encode/decode round trip: worst deviation " + fmt(worst) + " > 1e-5");
        detail += "; box round-trip " + fmt(worst);
    }
}

// ---- criterion 4: all six generator-merger pairings train one step ----
void criterion_structural(std::string& detail) {
    SynthConfig sc;
    sc.n_images = 1;
    sc.seed = 77;
    auto data = synth_generate(sc);  // one 256x256 sample

    for (int k = 1; k <= 6; ++k) {
        TrainConfig tc;
        tc.seed = 100 + static_cast<std::uint64_t>(k);
        tc.generator_combo = "Channel Generator-" + std::to_string(k);
        tc.merger_preset = "Channel Merger-" + std::to_string(k);
        auto model = build_pipeline(tc);
        model->set_training(true);
        LossResult r = model->loss_on_sample(data[0]);
        require(std::isfinite(r.values.total) && r.values.total > 0,
                tc.generator_combo + ": non-finite or non-positive loss");
        r.total.backward();
        for (const GroupGradNorm& g : model->group_grad_norms()) {
            if (g.frozen) continue;
            require(g.norm > 0 && std::isfinite(g.norm),
                    tc.generator_combo + ": parameter group '" + g.group +
                        "' has zero or non-finite gradient norm");
        }
        detail += (k > 1 ? ", " : "") + std::string("pairing-") + std::to_string(k) + " loss " +
                  fmt(r.values.total);
    }
}

// ---- shared fixture for criteria 5 and 8 ----
struct OverfitResult {
    double final_f = 0;
    double first_loss = 0, min_loss = 0;
    std::vector<LossBreakdown> iterations;
    GateStats gates;
    bool ran = false;
};

OverfitResult& overfit_fixture() {
    static OverfitResult result;
    if (result.ran) return result;
    SynthConfig sc;
    sc.n_images = 16;
    sc.seed = 2024;
    auto data = synth_generate(sc);

    TrainConfig tc;              // Table-3 defaults for the optimizer family
    tc.seed = 31;
    tc.learning_rate = 0.02;     // desk-profile overfit fixture rate (pinned)
    tc.epochs = 1000;
    tc.max_iterations = 200;
    auto model = build_pipeline(tc);
    RunRecord rec = train(tc, data, *model);
    MatchCriterion crit;  // IoU >= 0.5
    MetricsReport report = evaluate_model(*model, data, crit);

    result.final_f = report.f_score;
    result.iterations = rec.iterations;
    result.first_loss = rec.iterations.front().total;
    result.min_loss = 1e300;
    for (const LossBreakdown& lb : rec.iterations)
        result.min_loss = std::min(result.min_loss, lb.total);
    result.gates = model->gate_stats();
    result.ran = true;
    return result;
}

// ---- criterion 5: overfit capacity on 16 images ----
void criterion_overfit(std::string& detail) {
    OverfitResult& r = overfit_fixture();
    require(r.final_f >= 0.9, "train F-score " + fmt(r.final_f) + " < 0.9 after 200 iterations");
    double ratio = r.first_loss / r.min_loss;
    require(ratio >= 10.0, "loss decreased only " + fmt(ratio) + "x (needed 10x)");
    detail = "F=" + fmt(r.final_f) + ", loss " + fmt(r.first_loss) + " -> " + fmt(r.min_loss) +
             " (" + fmt(ratio) + "x)";
}

// ---- criterion 6: generalization to held-out groups ----
void criterion_generalization(std::string& detail) {
    SynthConfig sc;
    sc.n_images = 96;  // 24 groups of 4 -> 64 train / 32 held out
    sc.seed = 4242;
    auto all = synth_generate(sc);
    DatasetSplit split = split_dataset(all, {2.0 / 3.0, 0.0, 1.0 / 3.0}, 9);
    require(split.train.size() == 64 && split.test.size() == 32,
            "unexpected split sizes: " + std::to_string(split.train.size()) + "/" +
                std::to_string(split.test.size()));
    // group disjointness
    for (const ImageSample& tr : split.train)
        for (const ImageSample& te : split.test)
            require(tr.group != te.group, "train/test groups overlap: " + tr.group);

    TrainConfig tc;
    tc.seed = 51;
    tc.learning_rate = 0.02;  // same pinned desk rate as the overfit fixture
    tc.epochs = 40;
    tc.max_iterations = 480;
    auto model = build_pipeline(tc);
    train(tc, split.train, *model);
    MatchCriterion crit;
    MetricsReport report = evaluate_model(*model, split.test, crit);
    require(report.f_score >= 0.7,
            "held-out F-score " + fmt(report.f_score) + " < 0.7 (P " + fmt(report.precision) +
                ", R " + fmt(report.recall) + ")");
    detail = "held-out F=" + fmt(report.f_score) + " (P " + fmt(report.precision) + ", R " +
             fmt(report.recall) + ") on 32 images, disjoint groups";
}

// ---- criterion 7: determinism ----
void criterion_determinism(std::string& detail) {
    SynthConfig sc;
    sc.n_images = 8;
    sc.seed = 321;
    auto data = synth_generate(sc);
    TrainConfig tc;
    tc.seed = 77;
    tc.batch_size = 2;
    tc.epochs = 100;
    tc.max_iterations = 12;

    auto run_once = [&](RunRecord& rec, MetricsReport& rep) {
        auto model = build_pipeline(tc);
        rec = train(tc, data, *model);
        MatchCriterion crit;
        rep = evaluate_model(*model, data, crit);
    };
    RunRecord r1, r2;
    MetricsReport m1, m2;
    run_once(r1, m1);
    run_once(r2, m2);

    require(r1.iterations.size() == r2.iterations.size(), "iteration counts differ");
    double worst = 0;
    for (size_t i = 0; i < r1.iterations.size(); ++i)
        worst = std::max(worst, std::abs(r1.iterations[i].total - r2.iterations[i].total));
    require(worst <= 1e-6, "loss logs differ by " + fmt(worst) + " > 1e-6");
    require(m1.tp == m2.tp && m1.fp == m2.fp && m1.fn == m2.fn &&
                m1.precision == m2.precision && m1.recall == m2.recall && m1.f_score == m2.f_score,
            "final metrics reports differ between identical runs");
    detail = std::to_string(r1.iterations.size()) + " steps, max |delta loss| = " + fmt(worst) +
             ", reports identical";
}

// ---- criterion 8: loss identities and gate/softmax ranges ----
void criterion_loss_identities(std::string& detail) {
    OverfitResult& r = overfit_fixture();
    for (size_t i = 0; i < r.iterations.size(); ++i) {
        const LossBreakdown& lb = r.iterations[i];
        require(lb.total == lb.cls + lb.box + lb.mask,
                "step " + std::to_string(i + 1) + ": total != cls + box + mask exactly");
    }
    require(r.gates.any_gate, "no attention gates were recorded");
    require(r.gates.gate_min > 0.0 && r.gates.gate_max < 1.0,
            "attention gate range [" + fmt(r.gates.gate_min) + ", " + fmt(r.gates.gate_max) +
                "] leaves (0,1)");
    require(r.gates.max_rowsum_err <= 1e-6,
            "softmax row sums deviate by " + fmt(r.gates.max_rowsum_err) + " > 1e-6");
    detail = std::to_string(r.iterations.size()) + " steps exact; gates in [" +
             fmt(r.gates.gate_min) + ", " + fmt(r.gates.gate_max) + "]; row-sum err " +
             fmt(r.gates.max_rowsum_err);
}

struct Criterion {
    int id;
    const char* title;
    std::function<void(std::string&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> criteria{
        {1, "metric arithmetic vs published values", criterion_metric_arithmetic},
        {2, "gradient-check suite under 1e-4", criterion_gradcheck},
        {3, "oracle equivalences", criterion_oracles},
        {4, "all six generator/merger pairings train", criterion_structural},
        {5, "overfit capacity on 16 images", criterion_overfit},
        {6, "generalization to held-out groups", criterion_generalization},
        {7, "seeded training determinism", criterion_determinism},
        {8, "loss identities and attention ranges", criterion_loss_identities},
    };

    int only = argc > 1 ? std::atoi(argv[1]) : 0;
    int failures = 0;
    for (Criterion& c : criteria) {
        if (only != 0 && c.id != only) continue;
        auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = true;
        std::string message;
        try {
            c.run(detail);
        } catch (const Failure& f) {
            ok = false;
            message = f.message;
        } catch (const std::exception& e) {
            ok = false;
            message = std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string suffix = ok ? (detail.empty() ? std::string() : " -- " + detail) : " -- " + message;
        std::printf("[%s] criterion %d: %s (%.1fs)%s\n", ok ? "PASS" : "FAIL", c.id, c.title, secs,
                    suffix.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    if (failures) std::printf("%d criterion(s) FAILED\n", failures);
    else std::printf("all criteria passed\n");
    return failures == 0 ? 0 : 1;
}
