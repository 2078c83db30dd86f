#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

#include "emgal/trainer.hpp"
#include "oracles.hpp"

using namespace emgal;

namespace {

Embedding vec(std::initializer_list<double> values) {
    Embedding v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double value : values) v[i++] = value;
    return v;
}

// Two separable 2-D blobs.
std::vector<TrainSample> blob_dataset(std::uint64_t seed, int per_class = 16) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::vector<TrainSample> data;
    for (int i = 0; i < per_class; ++i) {
        data.push_back({vec({2.0 + noise(rng), noise(rng)}), "A", std::nullopt});
        data.push_back({vec({-2.0 + noise(rng), noise(rng)}), "B", std::nullopt});
    }
    return data;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("embed examples") {
    ToyEmbedder identity{Matrix::Identity(2, 2), false};
    CHECK(embed(identity, vec({1, 2})) == vec({1, 2}));

    ToyEmbedder normalized{Matrix::Identity(2, 2), true};
    const Embedding e = embed(normalized, vec({3, 4}));
    CHECK(e[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(e[1] == doctest::Approx(0.8).epsilon(1e-12));

    ToyEmbedder zero{Matrix::Zero(2, 2), true};
    try {
        embed(zero, vec({1, 2}));
        FAIL("expected a throw");
    } catch (const Error& e2) {
        CHECK(e2.code() == Errc::zero_vector);
    }

    try {
        embed(identity, vec({1, 2, 3}));
        FAIL("expected a throw");
    } catch (const Error& e3) {
        CHECK(e3.code() == Errc::dimension_mismatch);
    }
}

TEST_CASE("all_valid mining on 2 classes x 2 samples yields 8 triples") {
    const std::vector<BatchItem> batch = {
        {vec({0, 0}), "A", std::nullopt},
        {vec({0, 1}), "A", std::nullopt},
        {vec({5, 0}), "B", std::nullopt},
        {vec({5, 1}), "B", std::nullopt},
    };
    const auto triples = mine_triplets(batch, MinerStrategy::all_valid);
    CHECK(triples.size() == 8);

    std::set<std::tuple<int, int, int>> got;
    for (const auto& t : triples) got.insert({t.anchor, t.positive, t.negative});
    CHECK(got == oracles::enumerate_triplets({"A", "A", "B", "B"}));
}

TEST_CASE("all_valid mining equals brute-force enumeration on random batches") {
    std::mt19937_64 rng(21);
    const char* names[] = {"A", "B", "C"};
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3 + static_cast<int>(rng() % 10);  // up to 12
        std::vector<BatchItem> batch;
        std::vector<std::string> labels;
        for (int i = 0; i < n; ++i) {
            labels.emplace_back(names[rng() % 3]);
            batch.push_back({oracles::random_vector(rng, 3), labels.back(), std::nullopt});
        }
        const auto expected = oracles::enumerate_triplets(labels);
        if (expected.empty()) {
            CHECK_THROWS_AS(mine_triplets(batch, MinerStrategy::all_valid), Error);
            continue;
        }
        std::set<std::tuple<int, int, int>> got;
        for (const auto& t : mine_triplets(batch, MinerStrategy::all_valid))
            got.insert({t.anchor, t.positive, t.negative});
        CHECK(got == expected);
    }
}

TEST_CASE("single-class batches cannot be mined") {
    const std::vector<BatchItem> batch = {
        {vec({0, 0}), "A", std::nullopt},
        {vec({1, 0}), "A", std::nullopt},
    };
    try {
        mine_triplets(batch, MinerStrategy::all_valid);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::insufficient_classes);
    }
}

TEST_CASE("semi_hard output is a subset of all_valid") {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<BatchItem> batch;
        std::vector<std::string> labels;
        for (int i = 0; i < 8; ++i) {
            labels.emplace_back(i % 2 == 0 ? "A" : "B");
            batch.push_back({oracles::random_vector(rng, 3), labels.back(), std::nullopt});
        }
        std::set<std::tuple<int, int, int>> all;
        for (const auto& t : mine_triplets(batch, MinerStrategy::all_valid))
            all.insert({t.anchor, t.positive, t.negative});
        const Margin margin{0.8, 0};
        for (const auto& t :
             mine_triplets(batch, MinerStrategy::semi_hard, margin, MetricId::euclidean())) {
            CHECK(all.count({t.anchor, t.positive, t.negative}) == 1);
            const double d_ap =
                distance(MetricId::euclidean(), batch[t.anchor].embedding,
                         batch[t.positive].embedding);
            const double d_an =
                distance(MetricId::euclidean(), batch[t.anchor].embedding,
                         batch[t.negative].embedding);
            CHECK(d_ap < d_an);
            CHECK(d_an < d_ap + margin.m);
        }
    }
}

TEST_CASE("gs_trs covers cross-group positives and validates group tags") {
    const std::vector<BatchItem> batch = {
        {vec({0, 0}), "A", "g1"},
        {vec({0, 1}), "A", "g2"},
        {vec({5, 0}), "B", "g1"},
    };
    const auto triples = mine_triplets(batch, MinerStrategy::gs_trs);
    bool cross_group = false;
    for (const auto& t : triples)
        if (batch[t.anchor].group == "g1" && batch[t.positive].group == "g2") cross_group = true;
    CHECK(cross_group);

    std::vector<BatchItem> untagged = batch;
    untagged[1].group = std::nullopt;
    try {
        mine_triplets(untagged, MinerStrategy::gs_trs);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::missing_groups);
    }
}

TEST_CASE("gs_trs covers every within-class group pair when a negative exists") {
    std::mt19937_64 rng(23);
    const char* groups[] = {"g1", "g2", "g3"};
    std::vector<BatchItem> batch;
    for (int i = 0; i < 9; ++i)
        batch.push_back({oracles::random_vector(rng, 2), i < 6 ? "A" : "B",
                         std::string(groups[i % 3])});
    const auto triples = mine_triplets(batch, MinerStrategy::gs_trs);
    for (const char* ga : groups) {
        for (const char* gb : groups) {
            if (std::string(ga) == gb) continue;
            bool found = false;
            for (const auto& t : triples)
                if (batch[t.anchor].class_label == "A" && batch[t.anchor].group == ga &&
                    batch[t.positive].group == gb)
                    found = true;
            CHECK(found);
        }
    }
}

TEST_CASE("aggregate_embeddings examples") {
    const Embedding mean = aggregate_embeddings({vec({2, 0}), vec({0, 2})}, false);
    CHECK(mean == vec({1, 1}));

    const Embedding renorm = aggregate_embeddings({vec({1, 0}), vec({0, 1})}, true);
    CHECK(renorm[0] == doctest::Approx(0.70711).epsilon(1e-4));
    CHECK(renorm[1] == doctest::Approx(0.70711).epsilon(1e-4));

    try {
        aggregate_embeddings({}, false);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::empty_list);
    }
    try {
        aggregate_embeddings({vec({1, 0}), vec({-1, 0})}, true);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::zero_vector);
    }
}

TEST_CASE("zero learning rate leaves weights at their seeded initialization") {
    TrainConfig config;
    config.learning_rate = 0.0;
    config.epochs = 5;
    config.batch_size = 8;
    config.seed = 3;
    const auto data = blob_dataset(3);
    const TrainResult a = train(config, data);
    const TrainResult b = train(config, data);
    CHECK(a.model.weights == b.model.weights);
    CHECK(a.loss_history.size() == 5);
    // Flat history: no update between epochs, only reshuffling.
    for (double loss : a.loss_history)
        CHECK(loss == doctest::Approx(a.loss_history.front()).epsilon(1e-12));
}

TEST_CASE("training is deterministic for a fixed seed") {
    TrainConfig config;
    config.epochs = 10;
    config.batch_size = 8;
    config.seed = 17;
    config.margin = {0.5, 0};
    const auto data = blob_dataset(17);
    const TrainResult a = train(config, data);
    const TrainResult b = train(config, data);
    CHECK(a.model.weights == b.model.weights);  // bit-identical
    CHECK(a.loss_history == b.loss_history);
}

TEST_CASE("triplet training on separable blobs halves the mean loss") {
    TrainConfig config;
    config.epochs = 50;
    config.batch_size = 8;
    config.seed = 5;
    config.margin = {4.0, 0};
    config.learning_rate = 0.05;
    const TrainResult result = train(config, blob_dataset(5));
    REQUIRE(result.loss_history.size() == 50);
    CHECK(result.loss_history.front() > 0.0);
    CHECK(result.loss_history.back() < 0.5 * result.loss_history.front());
}

TEST_CASE("one full-batch step applies the mean analytic gradient") {
    const std::vector<TrainSample> data = {
        {vec({1.0, 0.2}), "A", std::nullopt},  {vec({1.2, -0.1}), "A", std::nullopt},
        {vec({0.8, 0.4}), "A", std::nullopt},  {vec({-1.0, 0.3}), "B", std::nullopt},
        {vec({-1.1, -0.2}), "B", std::nullopt}, {vec({-0.9, 0.1}), "B", std::nullopt},
    };
    TrainConfig config;
    config.epochs = 1;
    config.batch_size = 16;  // full batch
    config.seed = 29;
    config.margin = {0.4, 0};
    config.learning_rate = 0.1;

    TrainConfig frozen = config;
    frozen.learning_rate = 0.0;
    const Matrix w0 = train(frozen, data).model.weights;
    const Matrix w1 = train(config, data).model.weights;
    const Matrix step = (w0 - w1) / config.learning_rate;

    // Scalar batch loss as a function of the weights, mined by the
    // enumeration oracle.
    std::vector<std::string> labels;
    for (const auto& sample : data) labels.push_back(sample.class_label);
    const auto units = oracles::enumerate_triplets(labels);
    const auto batch_loss = [&](const Matrix& w) {
        double total = 0.0;
        for (const auto& [a, p, n] : units) {
            const Embedding ea = w * data[a].features;
            const Embedding ep = w * data[p].features;
            const Embedding en = w * data[n].features;
            total += triplet_loss((ea - ep).norm(), (ea - en).norm(), config.margin);
        }
        return total / static_cast<double>(units.size());
    };

    Matrix fd(w0.rows(), w0.cols());
    const double h = 1e-5;
    for (Eigen::Index r = 0; r < w0.rows(); ++r) {
        for (Eigen::Index c = 0; c < w0.cols(); ++c) {
            Matrix hi = w0;
            Matrix lo = w0;
            hi(r, c) += h;
            lo(r, c) -= h;
            fd(r, c) = (batch_loss(hi) - batch_loss(lo)) / (2.0 * h);
        }
    }
    const double rel = (step - fd).norm() / std::max(fd.norm(), 1e-12);
    CHECK(rel < 1e-4);
}

TEST_CASE("exploding learning rate aborts with a non-finite loss diagnostic") {
    TrainConfig config;
    config.epochs = 3;
    config.batch_size = 32;
    config.seed = 31;
    // A margin far above any achievable separation keeps every hinge active,
    // so the first oversized step is taken and the second epoch overflows.
    config.margin = {50.0, 0};
    config.learning_rate = 1e200;
    config.metric = MetricKind::squared_euclidean;
    try {
        train(config, blob_dataset(31));
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::non_finite_loss);
    }
}

TEST_CASE("normalized embedder always emits unit-norm outputs") {
    TrainConfig config;
    config.epochs = 5;
    config.batch_size = 8;
    config.seed = 37;
    config.normalize_output = true;
    config.margin = {0.3, 0};
    const TrainResult result = train(config, blob_dataset(37));
    std::mt19937_64 rng(99);
    for (int i = 0; i < 100; ++i) {
        const Embedding x = oracles::random_vector(rng, 2);
        if ((result.model.weights * x).norm() <= 1e-12) continue;
        CHECK(std::abs(embed(result.model, x).norm() - 1.0) <= 1e-6);
    }
}

TEST_CASE("training requires two classes") {
    std::vector<TrainSample> single = {{vec({1, 0}), "A", std::nullopt},
                                       {vec({0, 1}), "A", std::nullopt},
                                       {vec({1, 1}), "A", std::nullopt},
                                       {vec({0, 0}), "A", std::nullopt}};
    TrainConfig config;
    try {
        train(config, single);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::insufficient_classes);
    }
}

TEST_CASE("contrastive and quadruplet training run end to end") {
    const auto data = blob_dataset(41);
    TrainConfig config;
    config.epochs = 8;
    config.batch_size = 8;
    config.seed = 41;
    config.margin = {0.6, 0.2};

    config.loss = LossKind::contrastive;
    const TrainResult contrastive = train(config, data);
    CHECK(contrastive.loss_history.back() <= contrastive.loss_history.front());

    config.loss = LossKind::quadruplet;
    const TrainResult quadruplet = train(config, data);
    CHECK(quadruplet.loss_history.size() == 8);
}

TEST_CASE("model serialization round-trips value-exactly") {
    std::mt19937_64 rng(53);
    ToyEmbedder model;
    model.normalize_output = true;
    model.weights.resize(3, 5);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (Eigen::Index r = 0; r < 3; ++r)
        for (Eigen::Index c = 0; c < 5; ++c) model.weights(r, c) = dist(rng);

    const std::string path = temp_path("emgal_model_roundtrip.json");
    save_model(model, path);
    const ToyEmbedder loaded = load_model(path);
    CHECK(loaded.normalize_output == model.normalize_output);
    CHECK(loaded.weights == model.weights);  // exact, not approximate
    std::filesystem::remove(path);
}
