#include <doctest.h>

#include <cmath>
#include <random>

#include "cb/gradcheck.hpp"
#include "cb/heads.hpp"
#include "cb/metrics.hpp"
#include "cb/ops.hpp"
#include "oracles.hpp"

using namespace cb;

namespace {

Tensor rand_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                   bool requires_grad = false) {
    return Tensor::from_data(shape, oracle::rand_vec(rng, static_cast<size_t>(numel_of(shape)), lo, hi),
                             requires_grad);
}

Detection det(double x1, double y1, double x2, double y2, double score) {
    Detection d;
    d.box = {x1, y1, x2, y2};
    d.score = score;
    return d;
}

// Gradient checks need a generic point: zero-initialized biases downstream of
// zero-heavy ReLU outputs put pre-activations exactly on the ReLU kink, where
// central differences and the subgradient legitimately disagree.
void jitter_params(ParamStore& ps, std::mt19937_64& rng, double amount = 0.3) {
    std::uniform_real_distribution<double> d(-amount, amount);
    for (auto& e : ps.params())
        for (double& v : e.tensor.values()) v += d(rng);
}

}  // namespace

TEST_SUITE("heads") {

TEST_CASE("detection head: softmax rows, uniform at zero weights, gradient check") {
    ParamStore ps(3);
    DetectionHead head(ps, "det", 4, 7, 16, 2);
    std::mt19937_64 rng(5);
    Tensor rois = rand_tensor({3, 4, 7, 7}, rng);
    auto out = head.forward(rois);
    CHECK(out.class_probs.shape() == Shape{3, 2});
    CHECK(out.box_deltas.shape() == Shape{3, 4});
    for (int i = 0; i < 3; ++i)
        CHECK(out.class_probs.at({i, 0}) + out.class_probs.at({i, 1}) == doctest::Approx(1.0).epsilon(1e-6));

    SUBCASE("zero weights give the uniform class distribution") {
        for (auto& e : ps.params()) std::fill(e.tensor.values().begin(), e.tensor.values().end(), 0.0);
        auto z = head.forward(rois);
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 2; ++k) CHECK(z.class_probs.at({i, k}) == doctest::Approx(0.5));
    }

    SUBCASE("gradient check at toy width") {
        ParamStore ps2(7);
        DetectionHead tiny(ps2, "det", 2, 3, 8, 2);
        jitter_params(ps2, rng);
        Tensor small = rand_tensor({2, 2, 3, 3}, rng, -1, 1, true);
        Tensor probe_c = rand_tensor({2, 2}, rng);
        Tensor probe_b = rand_tensor({2, 4}, rng);
        auto loss = [&] {
            auto o = tiny.forward(small);
            return add(sum_all(mul(o.class_probs, probe_c)), sum_all(mul(o.box_deltas, probe_b)));
        };
        for (auto& e : ps2.params()) {
            auto rep = check_gradient(loss, e.tensor, e.name);
            INFO(e.name, " rel err ", rep.max_relative_error);
            CHECK(rep.passed);
        }
        CHECK(check_gradient(loss, small, "roi input").passed);
    }
}

TEST_CASE("segmentation head: 14x14 in, 28x28 out, 0.5 at zero weights, gradient") {
    ParamStore ps(11);
    SegmentationHead head(ps, "mask", 4, 6, 1);
    std::mt19937_64 rng(13);
    Tensor rois = rand_tensor({2, 4, 14, 14}, rng);
    Tensor logits = head.forward(rois);
    CHECK(logits.shape() == Shape{2, 1, 28, 28});

    SUBCASE("zero weights give probability one half everywhere") {
        for (auto& e : ps.params()) std::fill(e.tensor.values().begin(), e.tensor.values().end(), 0.0);
        Tensor z = sigmoid(head.forward(rois));
        for (long long i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == doctest::Approx(0.5));
    }

    SUBCASE("gradient check at toy size") {
        ParamStore ps2(17);
        SegmentationHead tiny(ps2, "mask", 2, 3, 1);
        jitter_params(ps2, rng);
        Tensor small = rand_tensor({1, 2, 4, 4}, rng, -1, 1, true);
        Tensor probe = rand_tensor({1, 1, 8, 8}, rng);
        auto loss = [&] { return sum_all(mul(tiny.forward(small), probe)); };
        for (auto& e : ps2.params()) {
            auto rep = check_gradient(loss, e.tensor, e.name);
            INFO(e.name, " rel err ", rep.max_relative_error);
            CHECK(rep.passed);
        }
        CHECK(check_gradient(loss, small, "roi input").passed);
    }
}

TEST_CASE("loss_l1 semantics") {
    CHECK(loss_l1(Tensor::from_data({4}, {1, 2, 3, 4}), {1, 2, 3, 4}, 2).item() == 0.0);
    // two anchors whose per-anchor absolute sums are 1 and 2 -> (1+2)/2
    CHECK(loss_l1(Tensor::from_data({8}, {1, 0, 0, 0, 1, 1, 0, 0}),
                  {0, 0, 0, 0, 0, 0, 0, 0}, 2)
              .item() == doctest::Approx(1.5));
    CHECK(loss_l1(Tensor::from_data({4}, {9, 9, 9, 9}), {0, 0, 0, 0}, 0).item() == 0.0);

    std::mt19937_64 rng(19);
    Tensor pred = rand_tensor({12}, rng);
    auto target = oracle::rand_vec(rng, 12);
    double manual = 0;
    for (int i = 0; i < 12; ++i) manual += std::abs(pred.data()[i] - target[static_cast<size_t>(i)]);
    CHECK(loss_l1(pred, target, 3).item() == doctest::Approx(manual / 3.0).epsilon(1e-12));
}

TEST_CASE("total_loss adds exactly and flags NaN by component name") {
    auto r = total_loss(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0));
    CHECK(r.values.total == 0.0);
    auto r2 = total_loss(Tensor::scalar(1), Tensor::scalar(2), Tensor::scalar(3));
    CHECK(r2.values.total == 6.0);
    CHECK(r2.values.total == r2.values.cls + r2.values.box + r2.values.mask);

    bool finite_guard = finite_checks();
    finite_checks() = false;  // manufacture the NaN without tripping op checks
    Tensor nan_t = Tensor::scalar(std::nan(""));
    finite_checks() = finite_guard;
    CHECK_THROWS_WITH_AS(total_loss(Tensor::scalar(1), nan_t, Tensor::scalar(0)),
                         "loss component 'box' is NaN", NumericError);
}

TEST_CASE("total gradient equals the sum of component gradients") {
    std::mt19937_64 rng(23);
    Tensor x = rand_tensor({6}, rng, -1, 1, true);
    std::vector<double> ys{1, 0, 1, 0, 1, 0};
    auto make_cls = [&] { return loss_cross_entropy(softmax(reshape(x, {2, 3}), 1), {0, 2}); };
    auto make_box = [&] { return loss_l1(x, ys, 3); };
    auto make_mask = [&] { return loss_bce(sigmoid(x), ys); };

    // analytic gradient of the total
    x.zero_grad();
    LossResult total = total_loss(make_cls(), make_box(), make_mask());
    total.total.backward();
    std::vector<double> g_total = x.grad();

    // sum of analytic component gradients
    std::vector<double> g_sum(6, 0.0);
    for (auto& fn : {std::function<Tensor()>(make_cls), std::function<Tensor()>(make_box),
                     std::function<Tensor()>(make_mask)}) {
        x.zero_grad();
        fn().backward();
        for (int i = 0; i < 6; ++i) g_sum[static_cast<size_t>(i)] += x.grad()[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 6; ++i)
        CHECK(g_total[static_cast<size_t>(i)] == doctest::Approx(g_sum[static_cast<size_t>(i)]).epsilon(1e-10));

    // and the total itself passes a finite-difference check
    x.zero_grad();
    auto rep = check_gradient(
        [&] { return total_loss(make_cls(), make_box(), make_mask()).total; }, x, "total");
    CHECK(rep.passed);
}

TEST_CASE("postprocess basics and the composed oracle") {
    std::vector<Box> proposals{{10, 10, 30, 30}, {50, 50, 80, 82}, {12, 11, 31, 33}};
    auto flat_mask = [](const std::vector<Box>& boxes) {
        return Tensor::full({static_cast<int>(boxes.size()), 1, 4, 4}, 0.8);
    };
    PostprocessConfig cfg;
    cfg.score_threshold = 0.5;
    cfg.mask_threshold = 0.5;

    SUBCASE("all scores below threshold yield an empty list") {
        Tensor probs = Tensor::from_data({3, 2}, {0.9, 0.1, 0.8, 0.2, 0.7, 0.3});
        Tensor deltas = Tensor::zeros({3, 4});
        auto dets = postprocess(proposals, probs, deltas, flat_mask, cfg, 256, 256);
        CHECK(dets.empty());
    }
    SUBCASE("one confident roi gives exactly one detection with a binary mask") {
        Tensor probs = Tensor::from_data({3, 2}, {0.9, 0.1, 0.05, 0.95, 0.7, 0.3});
        Tensor deltas = Tensor::zeros({3, 4});
        auto dets = postprocess(proposals, probs, deltas, flat_mask, cfg, 256, 256);
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].label == 1);
        CHECK(dets[0].score == doctest::Approx(0.95));
        CHECK(dets[0].box.x1 == doctest::Approx(50));
        REQUIRE(dets[0].mask.size() == 16);
        for (auto v : dets[0].mask) CHECK(v == 1);
    }
    SUBCASE("detection count is monotone non-increasing in the score threshold") {
        std::mt19937_64 rng(29);
        int n = 30;
        std::vector<Box> props;
        std::vector<double> pvals;
        for (int i = 0; i < n; ++i) {
            double x1 = static_cast<double>(rng() % 200), y1 = static_cast<double>(rng() % 200);
            props.push_back({x1, y1, x1 + 10 + static_cast<double>(rng() % 30),
                             y1 + 10 + static_cast<double>(rng() % 30)});
        }
        std::vector<double> raw = oracle::rand_vec(rng, static_cast<size_t>(n), 0.01, 0.99);
        std::vector<double> probs_flat;
        for (double p : raw) {
            probs_flat.push_back(1 - p);
            probs_flat.push_back(p);
        }
        Tensor probs = Tensor::from_data({n, 2}, probs_flat);
        Tensor deltas = Tensor::zeros({n, 4});
        size_t prev = SIZE_MAX;
        for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            PostprocessConfig c2 = cfg;
            c2.score_threshold = thr;
            size_t count = postprocess(props, probs, deltas, flat_mask, c2, 256, 256).size();
            CHECK(count <= prev);
            prev = count;
        }
    }
    SUBCASE("random case matches a decode+filter+nms+threshold oracle") {
        std::mt19937_64 rng(31);
        for (int t = 0; t < 20; ++t) {
            int n = 5 + static_cast<int>(rng() % 20);
            std::vector<Box> props;
            std::vector<double> pflat, dflat;
            for (int i = 0; i < n; ++i) {
                double x1 = static_cast<double>(rng() % 180), y1 = static_cast<double>(rng() % 180);
                props.push_back({x1, y1, x1 + 8 + static_cast<double>(rng() % 40),
                                 y1 + 8 + static_cast<double>(rng() % 40)});
                double p = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
                pflat.push_back(1 - p);
                pflat.push_back(p);
                for (int k = 0; k < 4; ++k)
                    dflat.push_back(std::uniform_real_distribution<double>(-0.3, 0.3)(rng));
            }
            Tensor probs = Tensor::from_data({n, 2}, pflat);
            Tensor deltas = Tensor::from_data({n, 4}, dflat);
            auto dets = postprocess(props, probs, deltas, nullptr, cfg, 256, 256);

            // oracle composition
            std::vector<std::array<double, 4>> boxes;
            std::vector<double> scores;
            for (int i = 0; i < n; ++i) {
                double p = pflat[static_cast<size_t>(i) * 2 + 1];
                if (p < cfg.score_threshold) continue;
                auto d = oracle::decode_box({props[static_cast<size_t>(i)].x1, props[static_cast<size_t>(i)].y1,
                                             props[static_cast<size_t>(i)].x2, props[static_cast<size_t>(i)].y2},
                                            {dflat[static_cast<size_t>(i) * 4], dflat[static_cast<size_t>(i) * 4 + 1],
                                             dflat[static_cast<size_t>(i) * 4 + 2], dflat[static_cast<size_t>(i) * 4 + 3]},
                                            256, 256);
                boxes.push_back(d);
                scores.push_back(p);
            }
            auto kept = oracle::nms_quadratic(boxes, scores, cfg.nms_iou);
            REQUIRE(dets.size() == kept.size());
            for (size_t k = 0; k < kept.size(); ++k) {
                CHECK(dets[k].score == doctest::Approx(scores[static_cast<size_t>(kept[k])]));
                CHECK(dets[k].box.x1 == doctest::Approx(boxes[static_cast<size_t>(kept[k])][0]).epsilon(1e-9));
            }
        }
    }
    SUBCASE("thresholds outside (0,1) are config errors") {
        Tensor probs = Tensor::from_data({1, 2}, {0.5, 0.5});
        Tensor deltas = Tensor::zeros({1, 4});
        PostprocessConfig bad = cfg;
        bad.score_threshold = 0.0;
        CHECK_THROWS_AS(postprocess({proposals[0]}, probs, deltas, nullptr, bad, 256, 256), ConfigError);
    }
}

}  // TEST_SUITE

TEST_SUITE("metrics") {

TEST_CASE("match_detections basics") {
    MatchCriterion iou;
    SUBCASE("exact match gives (1,0,0)") {
        auto m = match_detections({det(10, 10, 20, 20, 0.9)}, {{10, 10, 20, 20}}, iou);
        CHECK(m.tp == 1);
        CHECK(m.fp == 0);
        CHECK(m.fn == 0);
        REQUIRE(m.pairs.size() == 1);
    }
    SUBCASE("no predictions gives all false negatives") {
        std::vector<Box> gts(5, Box{0, 0, 10, 10});
        auto m = match_detections({}, gts, iou);
        CHECK(m.tp == 0);
        CHECK(m.fp == 0);
        CHECK(m.fn == 5);
    }
    SUBCASE("each gt matches at most once") {
        auto m = match_detections({det(0, 0, 10, 10, 0.9), det(1, 1, 11, 11, 0.8)},
                                  {{0, 0, 10, 10}}, iou);
        CHECK(m.tp == 1);
        CHECK(m.fp == 1);
        CHECK(m.fn == 0);
    }
    SUBCASE("center-distance criterion") {
        MatchCriterion cd;
        cd.kind = MatchCriterion::Kind::center_distance;
        cd.center_distance_px = 5.0;
        auto m = match_detections({det(0, 0, 10, 10, 0.9)}, {{2, 2, 12, 12}}, cd);
        CHECK(m.tp == 1);  // centers are (5,5) and (7,7): distance ~2.83
        cd.center_distance_px = 1.0;
        auto m2 = match_detections({det(0, 0, 10, 10, 0.9)}, {{2, 2, 12, 12}}, cd);
        CHECK(m2.tp == 0);
    }
    SUBCASE("invalid criterion parameters are config errors") {
        MatchCriterion bad;
        bad.iou_threshold = 0.0;
        CHECK_THROWS_AS(match_detections({}, {}, bad), ConfigError);
        MatchCriterion bad2;
        bad2.kind = MatchCriterion::Kind::center_distance;
        bad2.center_distance_px = -3;
        CHECK_THROWS_AS(match_detections({}, {}, bad2), ConfigError);
    }
}

TEST_CASE("greedy matching attains the exhaustive maximum on small random cases") {
    std::mt19937_64 rng(37);
    MatchCriterion iou;
    iou.iou_threshold = 0.4;
    int suboptimal = 0, total_cases = 0;
    for (int t = 0; t < 200; ++t) {
        int np = 1 + static_cast<int>(rng() % 5);
        int ng = 1 + static_cast<int>(rng() % 5);
        std::vector<Detection> preds;
        std::vector<Box> gts;
        for (int i = 0; i < np; ++i) {
            double x1 = static_cast<double>(rng() % 40), y1 = static_cast<double>(rng() % 40);
            Detection d = det(x1, y1, x1 + 10 + static_cast<double>(rng() % 15),
                              y1 + 10 + static_cast<double>(rng() % 15),
                              0.1 + 0.001 * static_cast<double>(t * 7 + i));  // distinct scores
            preds.push_back(d);
        }
        for (int g = 0; g < ng; ++g) {
            double x1 = static_cast<double>(rng() % 40), y1 = static_cast<double>(rng() % 40);
            gts.push_back({x1, y1, x1 + 10 + static_cast<double>(rng() % 15),
                           y1 + 10 + static_cast<double>(rng() % 15)});
        }
        auto m = match_detections(preds, gts, iou);
        std::vector<std::vector<bool>> compat(static_cast<size_t>(np),
                                              std::vector<bool>(static_cast<size_t>(ng), false));
        for (int p = 0; p < np; ++p)
            for (int g = 0; g < ng; ++g)
                compat[static_cast<size_t>(p)][static_cast<size_t>(g)] =
                    box_iou(preds[static_cast<size_t>(p)].box, gts[static_cast<size_t>(g)]) >=
                    iou.iou_threshold;
        int best = oracle::max_matching_size(compat);
        CHECK(m.tp <= best);
        ++total_cases;
        if (m.tp < best) ++suboptimal;
    }
    // Greedy-by-score is not maximum-cardinality in general: a higher-scored
    // prediction can take the only gt reachable by a later prediction. With
    // this seed that happens in exactly one of the 200 cases (case 136:
    // greedy 1, maximum 2); everywhere else greedy attains the maximum.
    CHECK(suboptimal == 1);
    CHECK(total_cases == 200);
}

TEST_CASE("recall and f_score formulas") {
    CHECK(recall(93, 7) == doctest::Approx(0.93));
    CHECK(recall(0, 5) == 0.0);
    CHECK(recall(99, 1) == doctest::Approx(0.99));
    CHECK(recall(0, 0) == 0.0);

    CHECK(f_score(0.8, 0.8) == doctest::Approx(0.8));
    CHECK(f_score(1.0, 0.0) == 0.0);
    // the published LYSTO pair: P recovered by inverting the F formula
    CHECK(f_score(0.8353, 0.93) == doctest::Approx(0.880).epsilon(0.001 / 0.880));

    // F never exceeds 1 or the larger coordinate
    std::mt19937_64 rng(41);
    for (int t = 0; t < 100; ++t) {
        double p = std::uniform_real_distribution<double>(0, 1)(rng);
        double r = std::uniform_real_distribution<double>(0, 1)(rng);
        double f = f_score(p, r);
        CHECK(f <= 1.0);
        CHECK(f <= std::max(p, r) + 1e-12);
    }
}

TEST_CASE("evaluate_dataset pools counts over images") {
    MatchCriterion iou;
    std::map<std::string, std::vector<Detection>> dets;
    std::map<std::string, std::vector<Box>> anns;

    SUBCASE("perfect predictor scores 1 everywhere") {
        for (int i = 0; i < 3; ++i) {
            std::string id = "img" + std::to_string(i);
            anns[id] = {{10, 10, 20, 20}, {30, 30, 45, 45}};
            dets[id] = {det(10, 10, 20, 20, 0.9), det(30, 30, 45, 45, 0.8)};
        }
        auto r = evaluate_dataset(dets, anns, iou);
        CHECK(r.precision == 1.0);
        CHECK(r.recall == 1.0);
        CHECK(r.f_score == 1.0);
    }
    SUBCASE("empty predictor has recall 0") {
        anns["a"] = {{0, 0, 10, 10}};
        dets["a"] = {};
        auto r = evaluate_dataset(dets, anns, iou);
        CHECK(r.recall == 0.0);
        CHECK(r.fn == 1);
    }
    SUBCASE("two-image toy case equals hand-pooled counts") {
        anns["a"] = {{0, 0, 10, 10}, {20, 20, 30, 30}};
        dets["a"] = {det(0, 0, 10, 10, 0.9), det(100, 100, 110, 110, 0.8)};  // 1 tp, 1 fp, 1 fn
        anns["b"] = {{5, 5, 15, 15}};
        dets["b"] = {det(5, 5, 15, 15, 0.7)};  // 1 tp
        auto r = evaluate_dataset(dets, anns, iou);
        CHECK(r.tp == 2);
        CHECK(r.fp == 1);
        CHECK(r.fn == 1);
        CHECK(r.precision == doctest::Approx(2.0 / 3.0));
        CHECK(r.recall == doctest::Approx(2.0 / 3.0));
        CHECK(r.per_image.size() == 2);
    }
    SUBCASE("missing ids on either side are data errors") {
        anns["a"] = {{0, 0, 10, 10}};
        dets["b"] = {};
        CHECK_THROWS_AS(evaluate_dataset(dets, anns, iou), DataError);
    }
    SUBCASE("pooled result is invariant to image ordering") {
        std::mt19937_64 rng(43);
        for (int i = 0; i < 6; ++i) {
            std::string id = "img" + std::to_string(i);
            for (int k = 0; k < 3; ++k) {
                double x1 = static_cast<double>(rng() % 100), y1 = static_cast<double>(rng() % 100);
                anns[id].push_back({x1, y1, x1 + 12, y1 + 12});
                if (k != 1)
                    dets[id].push_back(det(x1 + 1, y1 + 1, x1 + 13, y1 + 13, 0.5 + 0.01 * k));
            }
        }
        auto r1 = evaluate_dataset(dets, anns, iou);
        // rebuild the maps in reverse id order; std::map re-sorts but the
        // pooled counts must not depend on insertion or iteration order
        std::map<std::string, std::vector<Detection>> dets2(dets.rbegin(), dets.rend());
        std::map<std::string, std::vector<Box>> anns2(anns.rbegin(), anns.rend());
        auto r2 = evaluate_dataset(dets2, anns2, iou);
        CHECK(r1.tp == r2.tp);
        CHECK(r1.fp == r2.fp);
        CHECK(r1.fn == r2.fn);
        CHECK(r1.f_score == r2.f_score);
    }
}

TEST_CASE("recall is monotone non-decreasing as the score threshold drops") {
    std::mt19937_64 rng(47);
    std::vector<Detection> preds;
    std::vector<Box> gts;
    for (int i = 0; i < 20; ++i) {
        double x1 = static_cast<double>(rng() % 100), y1 = static_cast<double>(rng() % 100);
        gts.push_back({x1, y1, x1 + 14, y1 + 14});
        preds.push_back(det(x1 + 1, y1 + 1, x1 + 15, y1 + 15,
                            std::uniform_real_distribution<double>(0, 1)(rng)));
    }
    MatchCriterion iou;
    double prev_recall = -1;
    for (double thr : {0.9, 0.7, 0.5, 0.3, 0.1, 0.0}) {
        std::vector<Detection> kept;
        for (const auto& p : preds)
            if (p.score >= thr) kept.push_back(p);
        auto m = match_detections(kept, gts, iou);
        double r = recall(m.tp, m.fn);
        CHECK(r >= prev_recall);
        prev_recall = r;
    }
}

TEST_CASE("metrics report serializes to json") {
    MetricsReport r;
    r.tp = 9;
    r.fp = 2;
    r.fn = 1;
    r.precision = precision(9, 2);
    r.recall = recall(9, 1);
    r.f_score = f_score(r.precision, r.recall);
    r.criterion = "iou>=0.5";
    r.config_hash = "deadbeef";
    std::string j = r.to_json();
    CHECK(j.find("\"tp\": 9") != std::string::npos);
    CHECK(j.find("deadbeef") != std::string::npos);
}

}  // TEST_SUITE
