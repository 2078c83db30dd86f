#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emgal/losses.hpp"
#include "emgal/metrics.hpp"
#include "emgal/types.hpp"

namespace emgal {

/// Minimal trainable embedder: a linear map (d_emb x d_in) with optional
/// output L2 normalization. Deliberately small, but it exercises every loss,
/// miner and downstream consumer, and its gradients are exact.
struct ToyEmbedder {
    Matrix weights;
    bool normalize_output = false;

    int input_dim() const { return static_cast<int>(weights.cols()); }
    int embedding_dim() const { return static_cast<int>(weights.rows()); }
};

/// W*x, unit-normalized when the model asks for it. Throws Errc::zero_vector
/// when normalization meets an exactly-zero output.
Embedding embed(const ToyEmbedder& model, const Embedding& features);

enum class MinerStrategy { all_valid, semi_hard, gs_trs };
enum class LossKind { contrastive, triplet, quadruplet };

const char* miner_strategy_name(MinerStrategy s) noexcept;
std::optional<MinerStrategy> miner_strategy_from_name(std::string_view name) noexcept;
const char* loss_kind_name(LossKind k) noexcept;
std::optional<LossKind> loss_kind_from_name(std::string_view name) noexcept;

struct TrainConfig {
    Margin margin{0.2, 0.05};
    double learning_rate = 0.05;
    int epochs = 10;
    int batch_size = 16;
    std::uint64_t seed = 0;
    MinerStrategy miner = MinerStrategy::all_valid;
    LossKind loss = LossKind::triplet;
    MetricKind metric = MetricKind::euclidean;  // euclidean or squared_euclidean
    int embedding_dim = 0;                      // 0: same as input dim
    bool normalize_output = false;

    void validate() const;
};

struct TrainSample {
    Embedding features;
    std::string class_label;
    std::optional<std::string> group;  // aux-state group, used by gs_trs
};

struct BatchItem {
    Embedding embedding;
    std::string class_label;
    std::optional<std::string> group;
};

struct Triplet {
    int anchor;
    int positive;
    int negative;
    bool operator==(const Triplet&) const = default;
};

/// Mines (anchor, positive, negative) index triples from a batch.
///   all_valid: every ordered same-class (a, p) pair, a != p, against every
///              other-class negative.
///   semi_hard: the all_valid subset with d_ap < d_an < d_ap + m.
///   gs_trs:    all_valid over group-tagged samples; full enumeration means
///              every within-class group pair is represented whenever a
///              negative exists. Requires every sample to carry a group.
/// Margin and metric are consulted by semi_hard only.
std::vector<Triplet> mine_triplets(const std::vector<BatchItem>& batch, MinerStrategy strategy,
                                   const Margin& margin = {},
                                   const MetricId& metric = MetricId::euclidean());

struct TrainResult {
    ToyEmbedder model;
    std::vector<double> loss_history;  // per-epoch mean loss over mined units
};

/// Mini-batch SGD on the configured loss. Deterministic for a fixed seed:
/// identical config and data give bit-identical weights. Weights start
/// uniform in [-1/sqrt(d_in), 1/sqrt(d_in)] from the seeded generator.
TrainResult train(const TrainConfig& config, const std::vector<TrainSample>& data);

/// Component-wise mean of a non-empty set of embeddings, re-normalized to
/// unit length when `renormalize` is set (the aggregation rule for combining
/// multiple embeddings of one subject).
Embedding aggregate_embeddings(const std::vector<Embedding>& embeddings, bool renormalize);

/// Model file: one JSON object {"format":"emgal-model","version":1,...} with
/// row-major weights as 17-significant-digit numerals; round-trips are
/// value-exact.
void save_model(const ToyEmbedder& model, const std::string& path);
ToyEmbedder load_model(const std::string& path);

}  // namespace emgal
