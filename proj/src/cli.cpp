#include "emgal/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "emgal/conditioning.hpp"
#include "emgal/gallery.hpp"
#include "emgal/io.hpp"
#include "emgal/projection.hpp"
#include "emgal/simbench.hpp"
#include "emgal/trainer.hpp"

namespace emgal::cli {
namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int exit_code_for(Errc code) {
    switch (code) {
        case Errc::dimension_mismatch: return 3;
        case Errc::non_finite_loss: return 4;
        default: return 2;
    }
}

AuxStates parse_aux_flags(const std::vector<std::string>& flags) {
    AuxStates aux;
    for (const std::string& flag : flags) {
        const auto eq = flag.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == flag.size())
            throw UsageError("--aux expects var=state, got \"" + flag + "\"");
        aux[flag.substr(0, eq)] = flag.substr(eq + 1);
    }
    return aux;
}

MetricId metric_from_flags(const std::string& name, double minkowski_p) {
    const auto kind = metric_kind_from_name(name);
    if (!kind) throw UsageError("unknown metric \"" + name + "\"");
    if (*kind == MetricKind::mahalanobis)
        throw UsageError("mahalanobis needs an inverse covariance matrix; in-process API only");
    MetricId metric;
    metric.kind = *kind;
    metric.minkowski_p = minkowski_p;
    return metric;
}

struct ParsedRecord {
    std::optional<std::int64_t> id;
    std::string class_label;
    AuxStates aux;
    Embedding vec;
};

ParsedRecord parse_record_line(const nlohmann::json& obj, const std::string& where,
                               bool class_required) {
    ParsedRecord record;
    if (obj.contains("id")) record.id = obj["id"].get<std::int64_t>();
    if (obj.contains("class"))
        record.class_label = obj["class"].get<std::string>();
    else if (class_required)
        fail(Errc::corrupt_file, where + ": missing \"class\"");
    if (obj.contains("aux")) record.aux = obj["aux"].get<std::map<std::string, std::string>>();
    if (!obj.contains("vec")) fail(Errc::corrupt_file, where + ": missing \"vec\"");
    record.vec = io::vec_from_json(obj["vec"], where);
    return record;
}

std::vector<ParsedRecord> read_record_file(const std::string& path, bool class_required) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io_error, "cannot open " + path);
    std::vector<ParsedRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ": line " + std::to_string(line_no);
        records.push_back(
            parse_record_line(io::parse_line(line, path, line_no), where, class_required));
    }
    return records;
}

std::string query_result_json(const QueryResult& result) {
    std::ostringstream out;
    out << "{\"label\":" << io::quote(result.label) << ",\"distance\":";
    if (std::isfinite(result.distance))
        out << io::format_double(result.distance);
    else
        out << "null";
    out << ",\"nearest_id\":";
    if (result.nearest_id)
        out << *result.nearest_id;
    else
        out << "null";
    out << ",\"conditioned\":" << (result.conditioned ? "true" : "false") << ",\"per_class\":[";
    for (std::size_t i = 0; i < result.per_class.size(); ++i) {
        if (i > 0) out << ',';
        out << '[' << io::quote(result.per_class[i].first) << ','
            << io::format_double(result.per_class[i].second) << ']';
    }
    out << "]}";
    return out.str();
}

struct InitOptions {
    std::string store;
    int dim = 0;
    std::string metric = "euclidean";
    double minkowski_p = 2.0;
    double tau = 0.0;
    int cap_n = 1000;
    double mad_cutoff = 3.5;
    double adaptive_alpha = 2.0;
};

int cmd_init(const InitOptions& options) {
    if (std::filesystem::exists(options.store))
        fail(Errc::io_error, "store already exists: " + options.store);
    GalleryConfig config;
    config.dim = options.dim;
    config.metric = metric_from_flags(options.metric, options.minkowski_p);
    config.tau = options.tau;
    config.cap_n = options.cap_n;
    config.mad_cutoff = options.mad_cutoff;
    config.adaptive_alpha = options.adaptive_alpha;
    io::StoreLock lock(options.store);
    Gallery gallery(config);
    gallery.save(options.store);
    std::cout << "created " << options.store << " (dim " << config.dim << ", metric "
              << metric_kind_name(config.metric.kind) << ")\n";
    return 0;
}

int cmd_ingest(const std::string& store, const std::string& input) {
    io::StoreLock lock(store);
    Gallery gallery = Gallery::load(store);
    const auto records = read_record_file(input, /*class_required=*/true);

    // Validate dimensions up front so a bad file leaves the store untouched.
    for (const auto& record : records) {
        if (record.vec.size() != gallery.config().dim)
            fail(Errc::dimension_mismatch,
                 input + ": record dim " + std::to_string(record.vec.size()) +
                     " != gallery dim " + std::to_string(gallery.config().dim));
    }

    std::size_t ingested = 0;
    std::size_t skipped = 0;
    for (const auto& record : records) {
        if (record.id) {
            try {
                gallery.insert_with_id(*record.id, record.class_label, record.aux, record.vec);
                ++ingested;
            } catch (const Error& e) {
                if (e.code() != Errc::duplicate_id) throw;
                ++skipped;
            }
        } else {
            gallery.insert(record.class_label, record.aux, record.vec);
            ++ingested;
        }
    }
    gallery.save(store);
    std::cout << "{\"ingested\":" << ingested << ",\"skipped\":" << skipped << "}\n";
    return 0;
}

struct QueryOptions {
    std::string store;
    std::string input;
    std::string model_path;
    std::string out;
    std::vector<std::string> aux_flags;
    bool conditioned = false;
    bool adaptive = false;
};

int cmd_query(const QueryOptions& options) {
    io::StoreLock lock(options.store);
    const Gallery gallery = Gallery::load(options.store);
    const AuxStates flag_aux = parse_aux_flags(options.aux_flags);
    const bool conditioned = options.conditioned || !flag_aux.empty();
    if (conditioned && options.model_path.empty())
        throw UsageError("conditioned queries need a fitted cluster model (--model)");

    std::optional<ClusterModel> model;
    if (conditioned) model = ClusterModel::load(options.model_path);

    const auto queries = read_record_file(options.input, /*class_required=*/false);
    std::ostringstream lines;
    for (const auto& query : queries) {
        QueryResult result;
        if (conditioned) {
            AuxStates declared = query.aux;
            for (const auto& [var, state] : flag_aux) declared[var] = state;
            result = conditioned_query(gallery, *model, query.vec, declared,
                                       gallery.config().tau);
        } else {
            result = gallery.query_open_set(query.vec, options.adaptive);
        }
        lines << query_result_json(result) << '\n';
    }
    if (options.out.empty())
        std::cout << lines.str();
    else
        io::atomic_write(options.out, lines.str());
    return 0;
}

int cmd_prune(const std::string& store, std::optional<double> mad_cutoff,
              std::optional<int> cap) {
    io::StoreLock lock(store);
    Gallery gallery = Gallery::load(store);
    std::size_t evicted = 0;
    std::vector<std::int64_t> removed;
    for (const std::string& cls : gallery.classes()) {
        evicted += gallery.evict_to_cap(cls, cap);
        for (std::int64_t id : gallery.prune_mad(cls, mad_cutoff)) removed.push_back(id);
    }
    gallery.save(store);
    std::cout << "{\"evicted\":" << evicted << ",\"removed\":[";
    for (std::size_t i = 0; i < removed.size(); ++i) {
        if (i > 0) std::cout << ',';
        std::cout << removed[i];
    }
    std::cout << "]}\n";
    return 0;
}

int cmd_cluster(const std::string& store, const std::string& variable, const std::string& mode,
                std::uint64_t seed, std::string out) {
    const auto parsed_mode = condition_mode_from_name(mode);
    if (!parsed_mode) throw UsageError("--mode must be supervised or kmeans");
    if (out.empty()) out = store + ".cmodel";
    io::StoreLock lock(store);
    const Gallery gallery = Gallery::load(store);
    const ClusterModel model = fit_condition_model(gallery, variable, *parsed_mode, seed);
    model.save(out);
    std::cout << "wrote " << out << " (" << model.centroids.size() << " centroids)\n";
    return 0;
}

int cmd_saliency(const std::string& store, const std::string& variable) {
    io::StoreLock lock(store);
    const Gallery gallery = Gallery::load(store);
    const SaliencyReport report = saliency(gallery, variable);
    std::ostringstream out;
    out << "{\"variable\":" << io::quote(report.variable)
        << ",\"score\":" << io::format_double(report.score) << ",\"per_class\":{";
    bool first = true;
    for (const auto& [cls, scatter] : report.per_class) {
        if (!first) out << ',';
        first = false;
        out << io::quote(cls) << ":{\"between\":" << io::format_double(scatter.first)
            << ",\"within\":" << io::format_double(scatter.second) << '}';
    }
    out << "}}";
    std::cout << out.str() << '\n';
    return 0;
}

int cmd_project(const std::string& store, int components, const std::string& out,
                const std::string& color_by) {
    io::StoreLock lock(store);
    const Gallery gallery = Gallery::load(store);
    std::vector<Embedding> points;
    for (const GalleryRecord* record : gallery.records()) points.push_back(record->embedding);
    const ProjectionModel model = fit_pca(points, components);
    const auto rows = export_projection(gallery, model, color_by);
    std::ostringstream csv;
    write_projection_csv(csv, rows);
    io::atomic_write(out, csv.str());
    std::cout << "wrote " << out << " (" << rows.size() << " rows, " << components
              << " components)\n";
    return 0;
}

struct TrainOptions {
    std::string data;
    std::string out;
    std::string loss = "triplet";
    std::string miner = "all_valid";
    std::string metric = "euclidean";
    double margin = 0.2;
    double margin2 = 0.05;
    double learning_rate = 0.05;
    int epochs = 20;
    int batch_size = 16;
    std::uint64_t seed = 0;
    int embedding_dim = 0;
    bool normalize = false;
};

int cmd_train(const TrainOptions& options) {
    TrainConfig config;
    const auto loss = loss_kind_from_name(options.loss);
    if (!loss) throw UsageError("--loss must be contrastive, triplet or quadruplet");
    const auto miner = miner_strategy_from_name(options.miner);
    if (!miner) throw UsageError("--miner must be all_valid, semi_hard or gs_trs");
    const auto metric = metric_kind_from_name(options.metric);
    if (!metric || (*metric != MetricKind::euclidean && *metric != MetricKind::squared_euclidean))
        throw UsageError("--metric must be euclidean or squared_euclidean");
    config.loss = *loss;
    config.miner = *miner;
    config.metric = *metric;
    config.margin = Margin{options.margin, options.margin2};
    config.learning_rate = options.learning_rate;
    config.epochs = options.epochs;
    config.batch_size = options.batch_size;
    config.seed = options.seed;
    config.embedding_dim = options.embedding_dim;
    config.normalize_output = options.normalize;

    std::vector<TrainSample> samples;
    for (const auto& record : read_record_file(options.data, /*class_required=*/true)) {
        TrainSample sample;
        sample.features = record.vec;
        sample.class_label = record.class_label;
        auto group = record.aux.find("group");
        if (group != record.aux.end()) sample.group = group->second;
        samples.push_back(std::move(sample));
    }

    const TrainResult result = train(config, samples);
    save_model(result.model, options.out);
    std::cout << "{\"epochs\":" << result.loss_history.size() << ",\"first_epoch_loss\":"
              << io::format_double(result.loss_history.front()) << ",\"final_epoch_loss\":"
              << io::format_double(result.loss_history.back()) << ",\"model\":"
              << io::quote(options.out) << "}\n";
    return 0;
}

int cmd_bench(const std::string& spec_path, const std::string& out) {
    const nlohmann::json doc = io::parse_line(io::read_file(spec_path), spec_path, 1);
    for (const char* key : {"dim", "n_classes", "n_states", "class_separation", "aux_shift",
                            "noise_sigma", "samples_per_cell", "seed", "tau"})
        if (!doc.contains(key))
            fail(Errc::invalid_spec, spec_path + ": missing \"" + std::string(key) + "\"");

    SyntheticSpec spec;
    spec.dim = doc["dim"].get<int>();
    spec.n_classes = doc["n_classes"].get<int>();
    spec.n_states = doc["n_states"].get<int>();
    spec.class_separation = doc["class_separation"].get<double>();
    spec.aux_shift = doc["aux_shift"].get<double>();
    spec.noise_sigma = doc["noise_sigma"].get<double>();
    spec.samples_per_cell = doc["samples_per_cell"].get<int>();
    spec.seed = doc["seed"].get<std::uint64_t>();
    const double tau = doc["tau"].get<double>();

    EvalOptions options;
    if (doc.contains("split_fraction")) options.split_fraction = doc["split_fraction"].get<double>();
    if (doc.contains("eval_seed")) options.seed = doc["eval_seed"].get<std::uint64_t>();
    if (doc.contains("nearest_record"))
        options.unconditioned_nearest_record = doc["nearest_record"].get<bool>();

    const auto dataset = generate(spec);
    const BenchReport report = evaluate(dataset, tau, options);

    std::ostringstream json;
    json << "{\"acc_unconditioned\":" << io::format_double(report.acc_unconditioned)
         << ",\"acc_conditioned\":" << io::format_double(report.acc_conditioned)
         << ",\"unknown_rate_unconditioned\":"
         << io::format_double(report.unknown_rate_unconditioned)
         << ",\"unknown_rate_conditioned\":" << io::format_double(report.unknown_rate_conditioned)
         << ",\"per_cell\":[";
    for (std::size_t i = 0; i < report.per_cell.size(); ++i) {
        if (i > 0) json << ',';
        json << "{\"class\":" << io::quote(report.per_cell[i].class_label)
             << ",\"state\":" << io::quote(report.per_cell[i].state)
             << ",\"queries\":" << report.per_cell[i].queries << '}';
    }
    json << "]}\n";
    io::atomic_write(out, json.str());
    std::cout << "acc_unconditioned=" << report.acc_unconditioned
              << " acc_conditioned=" << report.acc_conditioned
              << " unknown_unconditioned=" << report.unknown_rate_unconditioned
              << " unknown_conditioned=" << report.unknown_rate_conditioned << '\n';
    return 0;
}

}  // namespace

int run(int argc, const char* const argv[]) {
    CLI::App app{"emgal: open-set embedding gallery engine"};
    app.require_subcommand(1);

    InitOptions init_options;
    auto* init = app.add_subcommand("init", "Create an empty gallery store");
    init->add_option("--store", init_options.store, "Gallery store path")->required();
    init->add_option("--dim", init_options.dim, "Embedding dimension")->required();
    init->add_option("--metric", init_options.metric, "Distance metric name");
    init->add_option("--minkowski-p", init_options.minkowski_p, "Minkowski order p >= 1");
    init->add_option("--tau", init_options.tau, "Open-set distance threshold")->required();
    init->add_option("--cap-n", init_options.cap_n, "Max records per class")->required();
    init->add_option("--mad-cutoff", init_options.mad_cutoff, "MAD outlier cutoff");
    init->add_option("--adaptive-alpha", init_options.adaptive_alpha,
                     "Adaptive threshold multiplier");

    std::string ingest_store, ingest_input;
    auto* ingest = app.add_subcommand("ingest", "Insert records from a line-delimited file");
    ingest->add_option("--store", ingest_store, "Gallery store path")->required();
    ingest->add_option("--input", ingest_input, "Records file, one object per line")->required();

    QueryOptions query_options;
    auto* query = app.add_subcommand("query", "Run open-set queries from a file");
    query->add_option("--store", query_options.store, "Gallery store path")->required();
    query->add_option("--input", query_options.input, "Queries file, one object per line")
        ->required();
    query->add_option("--model", query_options.model_path, "Cluster model for conditioning");
    query->add_option("--out", query_options.out, "Write results here instead of stdout");
    query->add_option("--aux", query_options.aux_flags,
                      "Declared var=state (implies conditioning; repeatable)");
    query->add_flag("--conditioned", query_options.conditioned,
                    "Condition on declared aux states (needs --model)");
    query->add_flag("--adaptive", query_options.adaptive,
                    "Per-class adaptive thresholds (unconditioned queries)");

    std::string prune_store;
    double prune_cutoff = -1.0;
    int prune_cap = -1;
    auto* prune = app.add_subcommand("prune", "Evict to cap and remove MAD outliers");
    prune->add_option("--store", prune_store, "Gallery store path")->required();
    prune->add_option("--mad-cutoff", prune_cutoff, "Override configured MAD cutoff");
    prune->add_option("--cap", prune_cap, "Override configured per-class cap");

    std::string cluster_store, cluster_var, cluster_mode = "supervised", cluster_out;
    std::uint64_t cluster_seed = 0;
    auto* cluster = app.add_subcommand("cluster", "Fit a (class, state) centroid model");
    cluster->add_option("--store", cluster_store, "Gallery store path")->required();
    cluster->add_option("--var", cluster_var, "Auxiliary variable")->required();
    cluster->add_option("--mode", cluster_mode, "supervised or kmeans")->required();
    cluster->add_option("--seed", cluster_seed, "k-means seed");
    cluster->add_option("--out", cluster_out, "Model path (default <store>.cmodel)");

    std::string saliency_store, saliency_var;
    auto* saliency_cmd = app.add_subcommand("saliency", "Score a background variable");
    saliency_cmd->add_option("--store", saliency_store, "Gallery store path")->required();
    saliency_cmd->add_option("--var", saliency_var, "Auxiliary variable")->required();

    std::string project_store, project_out, project_color = "class";
    int project_components = 2;
    auto* project = app.add_subcommand("project", "Export a PCA projection as CSV");
    project->add_option("--store", project_store, "Gallery store path")->required();
    project->add_option("--components", project_components, "Number of components")->required();
    project->add_option("--out", project_out, "CSV output path")->required();
    project->add_option("--color-by", project_color, "\"class\" or an aux variable");

    TrainOptions train_options;
    auto* train_cmd = app.add_subcommand("train", "Train the linear embedder");
    train_cmd->add_option("--data", train_options.data, "Training samples file")->required();
    train_cmd->add_option("--out", train_options.out, "Model output path")->required();
    train_cmd->add_option("--loss", train_options.loss, "contrastive, triplet or quadruplet");
    train_cmd->add_option("--miner", train_options.miner, "all_valid, semi_hard or gs_trs");
    train_cmd->add_option("--metric", train_options.metric,
                          "euclidean or squared_euclidean");
    train_cmd->add_option("--margin", train_options.margin, "Primary margin m");
    train_cmd->add_option("--margin2", train_options.margin2, "Quadruplet margin m2");
    train_cmd->add_option("--lr", train_options.learning_rate, "Learning rate");
    train_cmd->add_option("--epochs", train_options.epochs, "Epochs");
    train_cmd->add_option("--batch", train_options.batch_size, "Batch size");
    train_cmd->add_option("--seed", train_options.seed, "Seed");
    train_cmd->add_option("--emb-dim", train_options.embedding_dim,
                          "Embedding dim (0: input dim)");
    train_cmd->add_flag("--normalize", train_options.normalize, "L2-normalize outputs");

    std::string bench_spec, bench_out;
    auto* bench = app.add_subcommand("bench", "Run the synthetic conditioning benchmark");
    bench->add_option("--spec", bench_spec, "Synthetic spec JSON file")->required();
    bench->add_option("--out", bench_out, "Report output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    }

    try {
        if (init->parsed()) return cmd_init(init_options);
        if (ingest->parsed()) return cmd_ingest(ingest_store, ingest_input);
        if (query->parsed()) return cmd_query(query_options);
        if (prune->parsed())
            return cmd_prune(prune_store,
                             prune->count("--mad-cutoff") ? std::optional(prune_cutoff)
                                                          : std::nullopt,
                             prune->count("--cap") ? std::optional(prune_cap) : std::nullopt);
        if (cluster->parsed())
            return cmd_cluster(cluster_store, cluster_var, cluster_mode, cluster_seed,
                               cluster_out);
        if (saliency_cmd->parsed()) return cmd_saliency(saliency_store, saliency_var);
        if (project->parsed())
            return cmd_project(project_store, project_components, project_out, project_color);
        if (train_cmd->parsed()) return cmd_train(train_options);
        if (bench->parsed()) return cmd_bench(bench_spec, bench_out);
        std::cerr << "usage error: no subcommand\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 4;
    }
}

int run(const std::vector<std::string>& args) {
    std::vector<std::string> with_program = {"emgal"};
    with_program.insert(with_program.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(with_program.size());
    for (const auto& arg : with_program) argv.push_back(arg.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace emgal::cli
