#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "emgal/gallery.hpp"
#include "oracles.hpp"

using namespace emgal;

namespace {

Embedding vec(std::initializer_list<double> values) {
    Embedding v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double value : values) v[i++] = value;
    return v;
}

GalleryConfig config2(double tau = 1.0, int cap = 100) {
    GalleryConfig config;
    config.dim = 2;
    config.tau = tau;
    config.cap_n = cap;
    return config;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("insert assigns monotonic ids and timestamps") {
    Gallery gallery(config2());
    const auto first = gallery.insert("A", {}, vec({0, 0}));
    const auto second = gallery.insert("A", {}, vec({1, 0}));
    CHECK(first == 0);
    CHECK(second == 1);
    CHECK(gallery.find(0)->timestamp == 0);
    CHECK(gallery.find(1)->timestamp == 1);
    CHECK(gallery.find(0)->timestamp < gallery.find(1)->timestamp);

    try {
        gallery.insert("A", {}, vec({1, 2, 3}));
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::dimension_mismatch);
    }
}

TEST_CASE("strict aux schema rejects unknown variable names") {
    Gallery gallery(config2());
    AuxSchema schema;
    schema.variables["season"] = {"winter", "summer"};
    gallery.set_aux_schema(schema);
    gallery.insert("A", {{"season", "winter"}}, vec({0, 0}));
    try {
        gallery.insert("A", {{"weather", "wet"}}, vec({0, 0}));
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::unknown_aux_variable);
    }
}

TEST_CASE("open-set query basics") {
    Gallery gallery(config2(1.0));
    const QueryResult empty = gallery.query_open_set(vec({0, 0}));
    CHECK(empty.label == kUnknownLabel);
    CHECK(empty.per_class.empty());
    CHECK(!empty.nearest_id.has_value());

    const auto id_a = gallery.insert("A", {}, vec({0, 0}));
    gallery.insert("B", {}, vec({10, 0}));

    const QueryResult hit = gallery.query_open_set(vec({0, 0}));
    CHECK(hit.label == "A");
    CHECK(hit.distance == 0.0);
    CHECK(hit.nearest_id == id_a);
    CHECK(hit.per_class.size() == 2);
    CHECK(hit.per_class[0].first == "A");

    const QueryResult miss = gallery.query_open_set(vec({5, 0}));
    CHECK(miss.label == kUnknownLabel);
    CHECK(miss.distance == doctest::Approx(5.0));
}

TEST_CASE("query ties break to the lexicographically smaller class") {
    Gallery gallery(config2(10.0));
    gallery.insert("B", {}, vec({1, 0}));
    gallery.insert("A", {}, vec({-1, 0}));
    const QueryResult result = gallery.query_open_set(vec({0, 0}));
    CHECK(result.label == "A");
}

TEST_CASE("infinite tau never returns UNKNOWN on a non-empty gallery") {
    GalleryConfig config = config2();
    config.tau = std::numeric_limits<double>::infinity();
    Gallery gallery(config);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i)
        gallery.insert(i % 2 ? "A" : "B", {}, oracles::random_vector(rng, 2));
    for (int i = 0; i < 50; ++i)
        CHECK(gallery.query_open_set(oracles::random_vector(rng, 2, -10, 10)).label !=
              kUnknownLabel);
}

TEST_CASE("shrinking tau only changes labels to UNKNOWN") {
    Gallery gallery(config2(1.0));
    std::mt19937_64 rng(4);
    for (int i = 0; i < 30; ++i)
        gallery.insert(i % 3 == 0 ? "A" : (i % 3 == 1 ? "B" : "C"), {},
                       oracles::random_vector(rng, 2));
    for (int i = 0; i < 100; ++i) {
        const Embedding q = oracles::random_vector(rng, 2, -4, 4);
        const QueryResult wide = gallery.query_open_set_with_tau(q, 3.0);
        const QueryResult narrow = gallery.query_open_set_with_tau(q, 0.5);
        if (narrow.label != kUnknownLabel) CHECK(narrow.label == wide.label);
    }
}

TEST_CASE("evict_to_cap keeps the newest records") {
    Gallery gallery(config2(1.0, 3));
    for (int i = 0; i < 5; ++i) gallery.insert("A", {}, vec({double(i), 0}));
    CHECK(gallery.evict_to_cap("A") == 2);
    const auto remaining = gallery.records_of("A");
    REQUIRE(remaining.size() == 3);
    for (const GalleryRecord* record : remaining) CHECK(record->timestamp >= 2);

    CHECK(gallery.evict_to_cap("A") == 0);   // already under cap
    CHECK(gallery.evict_to_cap("nope") == 0);  // absent class is a no-op
}

TEST_CASE("MAD pruning removes exactly the hand-computed outlier") {
    // Component-wise median is (0, 0); distances are {2, 3, 3, 4, 9}.
    // M = 3, MAD = 1, z(9) = 0.6745 * 6 = 4.047 > 3.5.
    GalleryConfig config = config2(1.0);
    config.mad_cutoff = 3.5;
    Gallery gallery(config);
    gallery.insert("A", {}, vec({0, 2}));
    gallery.insert("A", {}, vec({0, -3}));
    gallery.insert("A", {}, vec({3, 0}));
    gallery.insert("A", {}, vec({-4, 0}));
    const auto outlier = gallery.insert("A", {}, vec({9, 0}));

    const auto removed = gallery.prune_mad("A");
    REQUIRE(removed.size() == 1);
    CHECK(removed[0] == outlier);
    CHECK(gallery.records_of("A").size() == 4);

    // Idempotent: an immediate second call removes nothing.
    CHECK(gallery.prune_mad("A").empty());
}

TEST_CASE("MAD pruning leaves identical members and small classes alone") {
    Gallery gallery(config2());
    for (int i = 0; i < 6; ++i) gallery.insert("same", {}, vec({1, 1}));
    CHECK(gallery.prune_mad("same").empty());

    gallery.insert("small", {}, vec({0, 0}));
    gallery.insert("small", {}, vec({1, 0}));
    gallery.insert("small", {}, vec({9, 9}));
    CHECK(gallery.prune_mad("small").empty());  // < 4 members

    try {
        gallery.prune_mad("absent");
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::unknown_class);
    }
}

TEST_CASE("adaptive threshold per class") {
    GalleryConfig config = config2(7.5);
    config.adaptive_alpha = 2.0;
    Gallery gallery(config);

    gallery.insert("single", {}, vec({1, 1}));
    CHECK(gallery.adaptive_tau("single") == doctest::Approx(7.5));  // global fallback

    for (int i = 0; i < 4; ++i) gallery.insert("tight", {}, vec({2, 2}));
    CHECK(gallery.adaptive_tau("tight") == doctest::Approx(0.0));

    // Centroid (0, 0); member distances {1, 1, 3, 3}: mu = 2, sigma_pop = 1.
    gallery.insert("spread", {}, vec({1, 0}));
    gallery.insert("spread", {}, vec({-1, 0}));
    gallery.insert("spread", {}, vec({0, 3}));
    gallery.insert("spread", {}, vec({0, -3}));
    CHECK(gallery.adaptive_tau("spread") == doctest::Approx(4.0).epsilon(1e-12));

    try {
        gallery.adaptive_tau("absent");
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::unknown_class);
    }
}

TEST_CASE("adaptive query uses the per-class threshold") {
    GalleryConfig config = config2(100.0);
    config.adaptive_alpha = 2.0;
    Gallery gallery(config);
    for (int i = 0; i < 4; ++i) gallery.insert("tight", {}, vec({2, 2}));
    // tau_c = 0 for the tight class: only exact matches pass.
    CHECK(gallery.query_open_set(vec({2, 2}), true).label == "tight");
    CHECK(gallery.query_open_set(vec({2.5, 2}), true).label == kUnknownLabel);
}

TEST_CASE("save/load round-trips state including counters") {
    GalleryConfig config;
    config.dim = 4;
    config.tau = 1.5;
    config.cap_n = 40;
    Gallery gallery(config);
    AuxSchema schema;
    schema.variables["season"] = {"summer", "winter"};
    gallery.set_aux_schema(schema);

    std::mt19937_64 rng(11);
    std::vector<std::int64_t> ids;
    for (int i = 0; i < 100; ++i) {
        const std::string cls(1, static_cast<char>('A' + (rng() % 5)));
        AuxStates aux;
        if (rng() % 2) aux["season"] = (rng() % 2) ? "winter" : "summer";
        ids.push_back(gallery.insert(cls, aux, oracles::random_vector(rng, 4)));
    }
    for (int i = 0; i < 20; ++i) gallery.erase(ids[rng() % ids.size()]);

    const std::string path = temp_path("emgal_roundtrip.gal");
    gallery.save(path);
    const Gallery loaded = Gallery::load(path);
    CHECK(loaded.state_equal(gallery));
    CHECK(loaded.next_id() == gallery.next_id());
    CHECK(loaded.next_timestamp() == gallery.next_timestamp());

    Gallery::compact(path);
    const Gallery compacted = Gallery::load(path);
    CHECK(compacted.state_equal(gallery));
    std::filesystem::remove(path);
}

TEST_CASE("compaction drops tombstones and their records") {
    Gallery gallery(config2());
    gallery.insert("A", {}, vec({0, 0}));
    const auto victim = gallery.insert("A", {}, vec({1, 0}));
    gallery.insert("B", {}, vec({2, 0}));
    gallery.erase(victim);

    const std::string path = temp_path("emgal_compact.gal");
    gallery.save(path);

    auto count_ops = [&path]() {
        std::ifstream in(path);
        std::string line;
        int ins = 0;
        int del = 0;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.find("\"op\":\"ins\"") != std::string::npos) ++ins;
            if (line.find("\"op\":\"del\"") != std::string::npos) ++del;
        }
        return std::make_pair(ins, del);
    };

    auto [ins_before, del_before] = count_ops();
    CHECK(ins_before == 3);
    CHECK(del_before == 1);

    Gallery::compact(path);
    auto [ins_after, del_after] = count_ops();
    CHECK(ins_after == 2);
    CHECK(del_after == 0);
    CHECK(Gallery::load(path).state_equal(gallery));
    std::filesystem::remove(path);
}

TEST_CASE("every line-boundary prefix of the log is a valid gallery") {
    Gallery gallery(config2());
    gallery.insert("A", {}, vec({0, 0}));
    gallery.insert("B", {}, vec({1, 0}));
    const auto victim = gallery.insert("A", {}, vec({2, 0}));
    gallery.erase(victim);
    const std::string path = temp_path("emgal_prefix.gal");
    gallery.save(path);

    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();
    REQUIRE(lines.size() == 5);

    for (std::size_t keep = 1; keep <= lines.size(); ++keep) {
        const std::string prefix_path = temp_path("emgal_prefix_cut.gal");
        std::ofstream out(prefix_path, std::ios::trunc);
        for (std::size_t i = 0; i < keep; ++i) out << lines[i] << '\n';
        out.close();
        CHECK_NOTHROW(Gallery::load(prefix_path));
        std::filesystem::remove(prefix_path);
    }
    std::filesystem::remove(path);
}

TEST_CASE("a truncated last line is reported with its line number") {
    Gallery gallery(config2());
    gallery.insert("A", {}, vec({0, 0}));
    gallery.insert("B", {}, vec({1, 0}));
    const std::string path = temp_path("emgal_truncated.gal");
    gallery.save(path);

    std::string contents;
    {
        std::ifstream in(path, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        contents = buf.str();
    }
    contents.resize(contents.size() - 15);  // chop into the final record
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << contents;
    }
    try {
        Gallery::load(path);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::corrupt_file);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("version and header dimension mismatches are diagnosed") {
    const std::string path = temp_path("emgal_badheader.gal");
    {
        std::ofstream out(path, std::ios::trunc);
        out << R"({"format":"emgal","version":9,"dim":2,"metric":"euclidean","tau":1.0,"cap_n":5})"
            << '\n';
    }
    try {
        Gallery::load(path);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::version_mismatch);
    }

    {
        std::ofstream out(path, std::ios::trunc);
        out << R"({"format":"emgal","version":1,"dim":2,"metric":"euclidean","tau":1.0,"cap_n":5})"
            << '\n'
            << R"({"op":"ins","id":0,"class":"A","aux":{},"ts":0,"vec":[1.0,2.0,3.0]})" << '\n';
    }
    try {
        Gallery::load(path);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::dimension_mismatch);
    }
    std::filesystem::remove(path);
}

TEST_CASE("parameterized metrics survive the header round-trip") {
    std::mt19937_64 rng(19);

    GalleryConfig minkowski = config2();
    minkowski.metric = MetricId::minkowski(3.0);
    Gallery a(minkowski);
    a.insert("A", {}, vec({0.1, 0.2}));
    const std::string path = temp_path("emgal_metric_roundtrip.gal");
    a.save(path);
    CHECK(Gallery::load(path).state_equal(a));

    GalleryConfig mahalanobis = config2();
    mahalanobis.metric = MetricId::mahalanobis(oracles::random_spd(rng, 2));
    Gallery b(mahalanobis);
    b.insert("A", {}, vec({0.5, -0.25}));
    b.save(path);
    CHECK(Gallery::load(path).state_equal(b));
    std::filesystem::remove(path);
}

TEST_CASE("class count never exceeds the cap after eviction") {
    std::mt19937_64 rng(13);
    Gallery gallery(config2(1.0, 7));
    for (int i = 0; i < 60; ++i)
        gallery.insert(i % 2 ? "A" : "B", {}, oracles::random_vector(rng, 2));
    for (const std::string& cls : gallery.classes()) {
        gallery.evict_to_cap(cls);
        CHECK(gallery.records_of(cls).size() <= 7);
    }
}
