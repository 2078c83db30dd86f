#include "emgal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "emgal/io.hpp"
#include "emgal/random.hpp"

namespace emgal {

Embedding embed(const ToyEmbedder& model, const Embedding& features) {
    if (features.size() != model.weights.cols())
        fail(Errc::dimension_mismatch,
             "embed: feature dim " + std::to_string(features.size()) + " != model input dim " +
                 std::to_string(model.weights.cols()));
    Embedding out = model.weights * features;
    if (model.normalize_output) return normalize(out);
    return out;
}

const char* miner_strategy_name(MinerStrategy s) noexcept {
    switch (s) {
        case MinerStrategy::all_valid: return "all_valid";
        case MinerStrategy::semi_hard: return "semi_hard";
        case MinerStrategy::gs_trs: return "gs_trs";
    }
    return "unknown";
}

std::optional<MinerStrategy> miner_strategy_from_name(std::string_view name) noexcept {
    for (MinerStrategy s :
         {MinerStrategy::all_valid, MinerStrategy::semi_hard, MinerStrategy::gs_trs})
        if (name == miner_strategy_name(s)) return s;
    return std::nullopt;
}

const char* loss_kind_name(LossKind k) noexcept {
    switch (k) {
        case LossKind::contrastive: return "contrastive";
        case LossKind::triplet: return "triplet";
        case LossKind::quadruplet: return "quadruplet";
    }
    return "unknown";
}

std::optional<LossKind> loss_kind_from_name(std::string_view name) noexcept {
    for (LossKind k : {LossKind::contrastive, LossKind::triplet, LossKind::quadruplet})
        if (name == loss_kind_name(k)) return k;
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        fail(Errc::invalid_config, "learning_rate must be finite and non-negative");
    if (epochs < 1) fail(Errc::invalid_config, "epochs must be >= 1");
    if (margin.m < 0.0 || margin.m2 < 0.0) fail(Errc::invalid_margins, "margins must be >= 0");
    if (loss == LossKind::quadruplet && margin.m2 > margin.m)
        fail(Errc::invalid_margins, "quadruplet requires m2 <= m");
    const int min_batch = loss == LossKind::contrastive ? 2 : 4;
    if (batch_size < min_batch)
        fail(Errc::invalid_config, "batch_size must be >= " + std::to_string(min_batch) +
                                       " for " + loss_kind_name(loss) + " training");
    if (metric != MetricKind::euclidean && metric != MetricKind::squared_euclidean)
        fail(Errc::unsupported_metric, "training supports euclidean and squared_euclidean only");
    if (embedding_dim < 0) fail(Errc::invalid_config, "embedding_dim must be >= 0");
}

std::vector<Triplet> mine_triplets(const std::vector<BatchItem>& batch, MinerStrategy strategy,
                                   const Margin& margin, const MetricId& metric) {
    const int n = static_cast<int>(batch.size());
    std::set<std::string> classes;
    std::map<std::string, int> class_counts;
    for (const auto& item : batch) {
        classes.insert(item.class_label);
        ++class_counts[item.class_label];
    }
    const bool some_class_repeats =
        std::any_of(class_counts.begin(), class_counts.end(),
                    [](const auto& kv) { return kv.second >= 2; });
    if (classes.size() < 2 || !some_class_repeats)
        fail(Errc::insufficient_classes,
             "triplet mining needs >= 2 classes and a repeated class in the batch");
    if (strategy == MinerStrategy::gs_trs) {
        for (int i = 0; i < n; ++i)
            if (!batch[i].group)
                fail(Errc::missing_groups,
                     "gs_trs requires a group tag on every sample (sample " + std::to_string(i) +
                         " has none)");
    }

    std::vector<Triplet> out;
    for (int a = 0; a < n; ++a) {
        for (int p = 0; p < n; ++p) {
            if (p == a || batch[p].class_label != batch[a].class_label) continue;
            for (int neg = 0; neg < n; ++neg) {
                if (batch[neg].class_label == batch[a].class_label) continue;
                if (strategy == MinerStrategy::semi_hard) {
                    const double d_ap =
                        distance(metric, batch[a].embedding, batch[p].embedding);
                    const double d_an =
                        distance(metric, batch[a].embedding, batch[neg].embedding);
                    if (!(d_ap < d_an && d_an < d_ap + margin.m)) continue;
                }
                out.push_back({a, p, neg});
            }
        }
    }
    return out;
}

Embedding aggregate_embeddings(const std::vector<Embedding>& embeddings, bool renormalize) {
    if (embeddings.empty()) fail(Errc::empty_list, "aggregate_embeddings needs >= 1 embedding");
    Embedding mean = Embedding::Zero(embeddings.front().size());
    for (const auto& e : embeddings) {
        require_same_dim(embeddings.front(), e);
        mean += e;
    }
    mean /= static_cast<double>(embeddings.size());
    if (renormalize) return normalize(mean);
    return mean;
}

namespace {

struct EmbeddedItem {
    Embedding raw;        // W * x
    Embedding out;        // normalized when requested
    double raw_norm = 0;  // cached for the normalization Jacobian
};

// Pulls a gradient on the model output back to a gradient on W*x through the
// full Jacobian of x -> x/|x|.
Embedding pull_back(const EmbeddedItem& item, const Embedding& grad_out, bool normalized) {
    if (!normalized) return grad_out;
    return (grad_out - item.out * item.out.dot(grad_out)) / item.raw_norm;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<TrainSample>& data) {
    config.validate();
    if (data.empty()) fail(Errc::empty_input, "training data is empty");
    const Eigen::Index d_in = data.front().features.size();
    std::set<std::string> class_set;
    for (const auto& sample : data) {
        if (sample.features.size() != d_in)
            fail(Errc::dimension_mismatch, "training data has inconsistent feature dims");
        require_finite(sample.features, "features");
        class_set.insert(sample.class_label);
    }
    if (class_set.size() < 2)
        fail(Errc::insufficient_classes, "training needs >= 2 classes, got " +
                                             std::to_string(class_set.size()));
    if (config.miner == MinerStrategy::gs_trs && config.loss != LossKind::contrastive) {
        for (const auto& sample : data)
            if (!sample.group)
                fail(Errc::missing_groups, "gs_trs requires a group tag on every sample");
    }

    const Eigen::Index d_emb = config.embedding_dim > 0 ? config.embedding_dim : d_in;
    const MetricId metric{config.metric, 2.0, {}};

    Rng rng(config.seed);
    ToyEmbedder model;
    model.normalize_output = config.normalize_output;
    model.weights.resize(d_emb, d_in);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    for (Eigen::Index r = 0; r < d_emb; ++r)
        for (Eigen::Index c = 0; c < d_in; ++c) model.weights(r, c) = rng.uniform(-bound, bound);

    std::vector<double> history;
    history.reserve(config.epochs);
    // One seeded shuffle fixes the batch partition for the whole run, so a
    // zero-learning-rate run reports a flat loss history.
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t epoch_units = 0;

        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const std::size_t bn = end - start;
            if (bn < 2) continue;

            std::vector<EmbeddedItem> items(bn);
            std::vector<BatchItem> batch(bn);
            for (std::size_t i = 0; i < bn; ++i) {
                const TrainSample& sample = data[order[start + i]];
                EmbeddedItem item;
                item.raw = model.weights * sample.features;
                // Beyond ~1e150 squared distances overflow and NaN hinges
                // silently collapse to zero loss, so stop here.
                if (!item.raw.allFinite() || item.raw.cwiseAbs().maxCoeff() > 1e150)
                    fail(Errc::non_finite_loss,
                         "epoch " + std::to_string(epoch + 1) +
                             ": embeddings overflowed; reduce the learning rate");
                if (config.normalize_output) {
                    item.raw_norm = item.raw.norm();
                    if (item.raw_norm <= 1e-12)
                        fail(Errc::zero_vector, "normalized embedder produced a zero output");
                    item.out = item.raw / item.raw_norm;
                } else {
                    item.out = item.raw;
                }
                items[i] = std::move(item);
                batch[i] = BatchItem{items[i].out, sample.class_label, sample.group};
            }

            Matrix grad = Matrix::Zero(d_emb, d_in);
            double batch_loss = 0.0;
            std::size_t units = 0;
            auto accumulate = [&](std::size_t index, const Embedding& g_out) {
                const Embedding g_raw = pull_back(items[index], g_out, config.normalize_output);
                grad += g_raw * data[order[start + index]].features.transpose();
            };

            if (config.loss == LossKind::contrastive) {
                for (std::size_t i = 0; i < bn; ++i) {
                    for (std::size_t j = i + 1; j < bn; ++j) {
                        const PairLabel y = batch[i].class_label == batch[j].class_label
                                                ? PairLabel::similar
                                                : PairLabel::dissimilar;
                        const PairGrad g = contrastive_loss_grad(items[i].out, items[j].out, y,
                                                                 config.margin, metric);
                        batch_loss += g.loss;
                        ++units;
                        accumulate(i, g.d_xi);
                        accumulate(j, g.d_xj);
                    }
                }
            } else {
                // Skip batches the shuffle left without a valid triple.
                std::set<std::string> batch_classes;
                std::map<std::string, int> batch_counts;
                for (const auto& item : batch) {
                    batch_classes.insert(item.class_label);
                    ++batch_counts[item.class_label];
                }
                const bool mineable =
                    batch_classes.size() >= 2 &&
                    std::any_of(batch_counts.begin(), batch_counts.end(),
                                [](const auto& kv) { return kv.second >= 2; });
                if (!mineable) continue;

                const std::vector<Triplet> triplets =
                    mine_triplets(batch, config.miner, config.margin, metric);
                for (const Triplet& t : triplets) {
                    if (config.loss == LossKind::triplet) {
                        const TripletGrad g =
                            triplet_loss_grad(items[t.anchor].out, items[t.positive].out,
                                              items[t.negative].out, config.margin, metric);
                        batch_loss += g.loss;
                        ++units;
                        accumulate(t.anchor, g.d_anchor);
                        accumulate(t.positive, g.d_positive);
                        accumulate(t.negative, g.d_negative);
                    } else {
                        // Second negative: first sample whose class differs from
                        // both the anchor's and the first negative's. Two-class
                        // batches fall back to the triplet term alone.
                        int second = -1;
                        for (std::size_t i = 0; i < bn; ++i) {
                            if (batch[i].class_label != batch[t.anchor].class_label &&
                                batch[i].class_label != batch[t.negative].class_label) {
                                second = static_cast<int>(i);
                                break;
                            }
                        }
                        if (second < 0) {
                            const TripletGrad g =
                                triplet_loss_grad(items[t.anchor].out, items[t.positive].out,
                                                  items[t.negative].out, config.margin, metric);
                            batch_loss += g.loss;
                            ++units;
                            accumulate(t.anchor, g.d_anchor);
                            accumulate(t.positive, g.d_positive);
                            accumulate(t.negative, g.d_negative);
                        } else {
                            const QuadrupletGrad g = quadruplet_loss_grad(
                                items[t.anchor].out, items[t.positive].out,
                                items[t.negative].out, items[second].out, config.margin, metric);
                            batch_loss += g.loss;
                            ++units;
                            accumulate(t.anchor, g.d_anchor);
                            accumulate(t.positive, g.d_positive);
                            accumulate(t.negative, g.d_negative1);
                            accumulate(static_cast<std::size_t>(second), g.d_negative2);
                        }
                    }
                }
            }

            if (units == 0) continue;
            if (!std::isfinite(batch_loss))
                fail(Errc::non_finite_loss,
                     "epoch " + std::to_string(epoch + 1) + ": batch loss is not finite; "
                     "reduce the learning rate");
            model.weights -= (config.learning_rate / static_cast<double>(units)) * grad;
            epoch_loss += batch_loss;
            epoch_units += units;
        }

        history.push_back(epoch_units > 0 ? epoch_loss / static_cast<double>(epoch_units) : 0.0);
    }

    return {std::move(model), std::move(history)};
}

void save_model(const ToyEmbedder& model, const std::string& path) {
    std::string out = "{\"format\":\"emgal-model\",\"version\":1,\"d_in\":" +
                      std::to_string(model.weights.cols()) +
                      ",\"d_emb\":" + std::to_string(model.weights.rows()) +
                      ",\"normalize_output\":" + (model.normalize_output ? "true" : "false") +
                      ",\"weights\":[";
    bool first = true;
    for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
        for (Eigen::Index c = 0; c < model.weights.cols(); ++c) {
            if (!first) out += ',';
            first = false;
            out += io::format_double(model.weights(r, c));
        }
    }
    out += "]}\n";
    io::atomic_write(path, out);
}

ToyEmbedder load_model(const std::string& path) {
    const std::string text = io::read_file(path);
    const nlohmann::json doc = io::parse_line(text, path, 1);
    if (!doc.contains("format") || doc["format"] != "emgal-model")
        fail(Errc::corrupt_file, path + ": not an emgal model file");
    if (!doc.contains("version") || doc["version"].get<int>() != 1)
        fail(Errc::version_mismatch, path + ": unsupported model version");
    for (const char* key : {"d_in", "d_emb", "normalize_output", "weights"})
        if (!doc.contains(key))
            fail(Errc::corrupt_file, path + ": missing \"" + std::string(key) + "\"");

    const auto d_in = doc["d_in"].get<Eigen::Index>();
    const auto d_emb = doc["d_emb"].get<Eigen::Index>();
    if (d_in < 1 || d_emb < 1) fail(Errc::corrupt_file, path + ": invalid model dims");
    const auto& weights = doc["weights"];
    if (!weights.is_array() || static_cast<Eigen::Index>(weights.size()) != d_in * d_emb)
        fail(Errc::corrupt_file, path + ": weights length != d_in * d_emb");

    ToyEmbedder model;
    model.normalize_output = doc["normalize_output"].get<bool>();
    model.weights.resize(d_emb, d_in);
    Eigen::Index flat = 0;
    for (const auto& value : weights) {
        if (!value.is_number()) fail(Errc::corrupt_file, path + ": weight is not a number");
        model.weights(flat / d_in, flat % d_in) = value.get<double>();
        ++flat;
    }
    if (!model.weights.allFinite()) fail(Errc::corrupt_file, path + ": weights not finite");
    return model;
}

}  // namespace emgal
