#include "omm/data_io.hpp"

#include "omm/parallel.hpp"
#include "omm/simulation.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace omm {

namespace fs = std::filesystem;

std::string to_string(DataErrorKind kind) {
    switch (kind) {
        case DataErrorKind::malformed: return "malformed input";
        case DataErrorKind::missing_series: return "missing series";
        case DataErrorKind::negative_count: return "negative count";
        case DataErrorKind::length_mismatch: return "length mismatch";
        case DataErrorKind::unknown_label: return "unknown label";
        case DataErrorKind::duplicate_entry: return "duplicate entry";
        case DataErrorKind::checksum_mismatch: return "checksum mismatch";
        case DataErrorKind::version_mismatch: return "version mismatch";
        case DataErrorKind::schema_mismatch: return "schema mismatch";
    }
    return "data error";
}

namespace {

[[noreturn]] void fail(DataErrorKind kind, const std::string& what) { throw DataFormatError(kind, what); }

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(DataErrorKind::missing_series, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

struct CsvRow {
    int line;
    std::vector<std::string> cells;
};

std::vector<CsvRow> parse_csv(const std::string& text, const std::string& source,
                              const std::vector<std::string>& header) {
    std::vector<CsvRow> rows;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    bool seen_header = false;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!seen_header) {
            if (cells != header) {
                std::string want;
                for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
                fail(DataErrorKind::malformed, source + ":" + std::to_string(number) + ": expected header '" + want + "'");
            }
            seen_header = true;
            continue;
        }
        if (cells.size() != header.size()) {
            fail(DataErrorKind::malformed, source + ":" + std::to_string(number) + ": expected " +
                                               std::to_string(header.size()) + " columns, found " +
                                               std::to_string(cells.size()));
        }
        rows.push_back({number, std::move(cells)});
    }
    if (!seen_header) fail(DataErrorKind::malformed, source + ": empty file");
    return rows;
}

std::string where(const std::string& source, int line, const std::string& column) {
    return source + ":" + std::to_string(line) + " column '" + column + "'";
}

std::int64_t parse_int(const std::string& s, const std::string& source, int line, const std::string& column) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        fail(DataErrorKind::malformed, where(source, line, column) + ": not an integer: '" + s + "'");
    return v;
}

double parse_double(const std::string& s, const std::string& source, int line, const std::string& column) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty() || !std::isfinite(v))
        fail(DataErrorKind::malformed, where(source, line, column) + ": not a finite number: '" + s + "'");
    return v;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

int label_index(std::vector<std::string>& labels, const std::string& label, bool fixed, const std::string& what,
                const std::string& at) {
    const auto it = std::find(labels.begin(), labels.end(), label);
    if (it != labels.end()) return static_cast<int>(it - labels.begin());
    if (label.empty()) fail(DataErrorKind::malformed, at + ": empty " + what + " label");
    if (fixed) fail(DataErrorKind::unknown_label, at + ": unknown " + what + " '" + label + "'");
    labels.push_back(label);
    return static_cast<int>(labels.size()) - 1;
}

}  // namespace

CountPanel parse_counts_csv(const std::string& text, const std::string& source, std::vector<std::string>& platforms,
                            std::vector<std::string>& opinions, bool labels_fixed) {
    const auto rows = parse_csv(text, source, {"time", "platform", "opinion", "count"});
    std::map<std::tuple<int, int, std::int64_t>, std::int64_t> cells;
    std::int64_t T = 0;
    for (const auto& row : rows) {
        const auto t = parse_int(row.cells[0], source, row.line, "time");
        if (t < 1) fail(DataErrorKind::malformed, where(source, row.line, "time") + ": time must be >= 1");
        const int p = label_index(platforms, row.cells[1], labels_fixed, "platform", where(source, row.line, "platform"));
        const int i = label_index(opinions, row.cells[2], labels_fixed, "opinion", where(source, row.line, "opinion"));
        const auto n = parse_int(row.cells[3], source, row.line, "count");
        if (n < 0) {
            fail(DataErrorKind::negative_count, where(source, row.line, "count") + ": count " + std::to_string(n) +
                                                    " at time=" + row.cells[0] + " platform=" + row.cells[1] +
                                                    " opinion=" + row.cells[2]);
        }
        if (!cells.emplace(std::tuple{p, i, t}, n).second) {
            fail(DataErrorKind::duplicate_entry, source + ":" + std::to_string(row.line) + ": second row for time=" +
                                                     row.cells[0] + " platform=" + row.cells[1] +
                                                     " opinion=" + row.cells[2]);
        }
        T = std::max(T, t);
    }
    if (platforms.empty() || opinions.empty()) fail(DataErrorKind::missing_series, source + ": no count rows");

    const int P = static_cast<int>(platforms.size());
    const int M = static_cast<int>(opinions.size());
    CountPanel panel(P, M, static_cast<int>(T));
    for (int p = 0; p < P; ++p)
        for (int i = 0; i < M; ++i) {
            int present = 0;
            std::int64_t first_missing = 0;
            for (std::int64_t t = 1; t <= T; ++t) {
                const auto it = cells.find({p, i, t});
                if (it == cells.end()) {
                    if (!first_missing) first_missing = t;
                    continue;
                }
                ++present;
                panel.set(p, i, static_cast<int>(t - 1), it->second);
            }
            const std::string series = "platform=" + platforms[p] + " opinion=" + opinions[i];
            if (present == 0) fail(DataErrorKind::missing_series, source + ": no rows for " + series);
            if (first_missing) {
                fail(DataErrorKind::length_mismatch, source + ": " + series + " has " + std::to_string(present) +
                                                         " of " + std::to_string(T) + " bins, first missing time=" +
                                                         std::to_string(first_missing));
            }
        }
    return panel;
}

SignalSet parse_signals_csv(const std::string& text, const std::string& source,
                            const std::vector<std::string>& opinions, std::vector<std::string>& interventions,
                            bool labels_fixed, int bins) {
    const auto rows = parse_csv(text, source, {"time", "series", "value"});
    // series key: -1 shared S, 0..M-1 per-opinion S, M + k intervention k
    const int M = static_cast<int>(opinions.size());
    std::map<int, std::map<std::int64_t, double>> series;
    std::vector<std::string> names;
    bool shared = false;
    bool per_opinion = false;
    for (const auto& row : rows) {
        const auto t = parse_int(row.cells[0], source, row.line, "time");
        if (t < 1) fail(DataErrorKind::malformed, where(source, row.line, "time") + ": time must be >= 1");
        const std::string& name = row.cells[1];
        const double v = parse_double(row.cells[2], source, row.line, "value");
        int key = 0;
        const std::string at = where(source, row.line, "series");
        if (name == "S") {
            shared = true;
            key = -1;
        } else if (name.rfind("S:", 0) == 0) {
            per_opinion = true;
            std::vector<std::string> known = opinions;
            key = label_index(known, name.substr(2), true, "opinion", at);
        } else if (name.rfind("X:", 0) == 0) {
            key = M + label_index(interventions, name.substr(2), labels_fixed, "intervention", at);
        } else {
            fail(DataErrorKind::unknown_label, at + ": series must be S, S:<opinion> or X:<name>, got '" + name + "'");
        }
        if (key < M && v < 0.0)
            fail(DataErrorKind::malformed, where(source, row.line, "value") + ": exogenous signal must be >= 0");
        if (!series[key].emplace(t, v).second)
            fail(DataErrorKind::duplicate_entry, source + ":" + std::to_string(row.line) + ": second value for " + name +
                                                     " at time=" + row.cells[0]);
    }
    if (shared && per_opinion) fail(DataErrorKind::malformed, source + ": mixes S with per-opinion S:<opinion> series");

    auto take = [&](int key, const std::string& label) {
        const auto it = series.find(key);
        if (it == series.end() || it->second.empty()) fail(DataErrorKind::missing_series, source + ": no rows for " + label);
        const auto& values = it->second;
        if (static_cast<int>(values.size()) != bins || values.rbegin()->first != bins) {
            fail(DataErrorKind::length_mismatch, source + ": series " + label + " has " +
                                                     std::to_string(values.size()) + " values up to time " +
                                                     std::to_string(values.rbegin()->first) + ", counts have " +
                                                     std::to_string(bins) + " bins");
        }
        std::vector<double> out;
        out.reserve(values.size());
        for (const auto& [t, v] : values) out.push_back(v);
        return out;
    };

    std::vector<std::vector<double>> exogenous;
    if (per_opinion) {
        for (int j = 0; j < M; ++j) exogenous.push_back(take(j, "S:" + opinions[j]));
    } else {
        exogenous.push_back(take(-1, "S"));
    }
    std::vector<std::vector<double>> x;
    for (std::size_t k = 0; k < interventions.size(); ++k)
        x.push_back(take(M + static_cast<int>(k), "X:" + interventions[k]));
    try {
        return SignalSet(std::move(exogenous), per_opinion, std::move(x));
    } catch (const std::invalid_argument& e) {
        fail(DataErrorKind::malformed, source + ": " + e.what());
    }
}

Dimensions DatasetBundle::dimensions() const {
    return {static_cast<int>(platforms.size()), static_cast<int>(opinions.size()),
            static_cast<int>(interventions.size()), signals.bins()};
}

void DatasetBundle::validate() const {
    if (samples.empty()) fail(DataErrorKind::missing_series, "dataset has no count samples");
    const int P = static_cast<int>(platforms.size());
    const int M = static_cast<int>(opinions.size());
    for (const auto& s : samples) {
        if (s.platforms() != P || s.opinions() != M)
            fail(DataErrorKind::length_mismatch, "count sample dimensions do not match the label lists");
        if (s.bins() != signals.bins())
            fail(DataErrorKind::length_mismatch, "counts have " + std::to_string(s.bins()) + " bins, signals " +
                                                     std::to_string(signals.bins()));
    }
    if (signals.intervention_count() != static_cast<int>(interventions.size()))
        fail(DataErrorKind::length_mismatch, "intervention labels do not match the signal series");
    if (signals.per_opinion() && static_cast<int>(signals.exogenous_series().size()) != M)
        fail(DataErrorKind::length_mismatch, "per-opinion exogenous series do not match the opinion labels");
}

bool DatasetBundle::operator==(const DatasetBundle& other) const {
    return platforms == other.platforms && opinions == other.opinions && interventions == other.interventions &&
           samples == other.samples && signals == other.signals && bin_width == other.bin_width;
}

namespace {

std::string sample_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "counts_%03zu.csv", index);
    return buf;
}

}  // namespace

DatasetBundle load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(DataErrorKind::missing_series, "dataset directory " + dir.string() + " not found");
    DatasetBundle bundle;
    bool fixed = false;
    const fs::path meta_path = dir / "meta.json";
    if (fs::exists(meta_path)) {
        try {
            const json meta = json::parse(read_file(meta_path));
            bundle.platforms = meta.at("platforms").get<std::vector<std::string>>();
            bundle.opinions = meta.at("opinions").get<std::vector<std::string>>();
            bundle.interventions = meta.value("interventions", std::vector<std::string>{});
            bundle.bin_width = meta.value("bin_width", std::string("1"));
        } catch (const json::exception& e) {
            fail(DataErrorKind::malformed, meta_path.string() + ": " + e.what());
        }
        fixed = true;
    }

    std::vector<fs::path> count_files;
    if (fs::exists(dir / "counts.csv")) count_files.push_back(dir / "counts.csv");
    for (std::size_t s = 0; fs::exists(dir / sample_name(s)); ++s) count_files.push_back(dir / sample_name(s));
    if (count_files.empty()) fail(DataErrorKind::missing_series, dir.string() + ": no counts.csv");
    if (fs::exists(dir / "counts.csv") && count_files.size() > 1)
        fail(DataErrorKind::malformed, dir.string() + ": both counts.csv and counts_NNN.csv present");

    for (std::size_t f = 0; f < count_files.size(); ++f) {
        const auto& path = count_files[f];
        bundle.samples.push_back(
            parse_counts_csv(read_file(path), path.filename().string(), bundle.platforms, bundle.opinions, fixed || f > 0));
        if (f > 0 && bundle.samples[f].bins() != bundle.samples[0].bins())
            fail(DataErrorKind::length_mismatch, path.filename().string() + " has a different number of bins");
        // labels seen in later files that never appeared are caught by the shape check
        if (bundle.samples[f].platforms() != static_cast<int>(bundle.platforms.size()) ||
            bundle.samples[f].opinions() != static_cast<int>(bundle.opinions.size()))
            fail(DataErrorKind::missing_series, path.filename().string() + " does not cover every label");
    }
    const fs::path signal_path = dir / "signals.csv";
    bundle.signals = parse_signals_csv(read_file(signal_path), "signals.csv", bundle.opinions, bundle.interventions,
                                       fixed, bundle.samples.front().bins());
    bundle.validate();
    return bundle;
}

void save_dataset(const DatasetBundle& bundle, const fs::path& dir) {
    bundle.validate();
    const int T = bundle.signals.bins();
    for (std::size_t s = 0; s < bundle.samples.size(); ++s) {
        const auto& panel = bundle.samples[s];
        std::string out = "time,platform,opinion,count\n";
        for (int b = 0; b < T; ++b)
            for (int p = 0; p < panel.platforms(); ++p)
                for (int i = 0; i < panel.opinions(); ++i)
                    out += std::to_string(b + 1) + "," + bundle.platforms[p] + "," + bundle.opinions[i] + "," +
                           std::to_string(panel.at(p, i, b)) + "\n";
        write_file(dir / (bundle.samples.size() == 1 ? std::string("counts.csv") : sample_name(s)), out);
    }
    std::string sig = "time,series,value\n";
    const auto& ex = bundle.signals.exogenous_series();
    for (int b = 0; b < T; ++b) {
        if (bundle.signals.per_opinion()) {
            for (std::size_t j = 0; j < ex.size(); ++j)
                sig += std::to_string(b + 1) + ",S:" + bundle.opinions[j] + "," + format_double(ex[j][b]) + "\n";
        } else {
            sig += std::to_string(b + 1) + ",S," + format_double(ex[0][b]) + "\n";
        }
        for (std::size_t k = 0; k < bundle.interventions.size(); ++k)
            sig += std::to_string(b + 1) + ",X:" + bundle.interventions[k] + "," +
                   format_double(bundle.signals.interventions()[k][b]) + "\n";
    }
    write_file(dir / "signals.csv", sig);
    json meta = {{"platforms", bundle.platforms},
                 {"opinions", bundle.opinions},
                 {"interventions", bundle.interventions},
                 {"bin_width", bundle.bin_width},
                 {"samples", bundle.samples.size()}};
    write_file(dir / "meta.json", meta.dump(2) + "\n");
}

std::vector<double> standardize_intervention(std::span<const double> news, std::span<const double> s) {
    if (news.size() != s.size())
        fail(DataErrorKind::length_mismatch, "news series has " + std::to_string(news.size()) + " bins, S has " +
                                                 std::to_string(s.size()));
    if (s.empty()) fail(DataErrorKind::missing_series, "empty series");
    const double s_max = *std::max_element(s.begin(), s.end());
    const double n_max = *std::max_element(news.begin(), news.end());
    if (!(s_max > 0.0)) fail(DataErrorKind::malformed, "exogenous series is all zero");
    const double scale = n_max / s_max;
    std::vector<double> out(news.size());
    for (std::size_t t = 0; t < news.size(); ++t) out[t] = news[t] - scale * s[t];
    return out;
}

// --- synthetic ----------------------------------------------------------------

void SyntheticConfig::validate() const {
    if (platforms < 1 || opinions < 2) throw std::invalid_argument("synthetic: need P >= 1 and M >= 2");
    if (bins < 1 || n_samples < 1 || n_groups < 1) throw std::invalid_argument("synthetic: T, samples, groups >= 1");
    const auto P = static_cast<std::size_t>(platforms);
    const auto M = static_cast<std::size_t>(opinions);
    const auto K = interventions.size();
    if (mu_split.shape() != std::array<std::size_t, 2>{P, M}) throw std::invalid_argument("synthetic: mu_split must be P×M");
    if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("synthetic: theta must be in (0, 1]");
    if (alpha && alpha->shape() != std::array<std::size_t, 2>{P, P}) throw std::invalid_argument("synthetic: alpha shape");
    if (gamma && gamma->shape() != std::array<std::size_t, 3>{P, M, K}) throw std::invalid_argument("synthetic: gamma shape");
    if (beta && beta->shape() != std::array<std::size_t, 4>{P, P, M, M}) throw std::invalid_argument("synthetic: beta shape");
    if (!(exogenous >= 0.0)) throw std::invalid_argument("synthetic: S must be >= 0");
}

SyntheticData generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    const int P = config.platforms;
    const int M = config.opinions;
    const int K = static_cast<int>(config.interventions.size());
    const int T = config.bins;
    const auto sz = [](int v) { return static_cast<std::size_t>(v); };

    Rng rng(derive_seed(config.seed, 0));
    auto draw = [&](double hi) { return std::uniform_real_distribution<double>(0.0, hi)(rng); };

    SyntheticData data;
    Model& m = data.truth;
    m.volume.mu.assign(sz(P), 0.0);
    for (int p = 0; p < P; ++p)
        for (int j = 0; j < M; ++j) m.volume.mu[p] += config.mu_split(p, j);
    m.volume.theta = config.theta;
    if (config.alpha) {
        m.volume.alpha = *config.alpha;
    } else {
        m.volume.alpha = Matrix({sz(P), sz(P)});
        for (auto& v : m.volume.alpha.data()) v = draw(config.alpha_max);
    }
    m.share = ShareParams::zeros(P, M, K);
    m.share.mu_split = config.mu_split;
    if (config.gamma) {
        m.share.gamma = *config.gamma;
    } else {
        for (auto& v : m.share.gamma.data()) v = draw(config.gamma_max);
    }
    if (config.beta) {
        m.share.beta = *config.beta;
    } else {
        for (auto& v : m.share.beta.data()) v = draw(config.beta_max);
    }
    m.scaling = FeatureScaling::identity(P, M, K);

    std::vector<std::vector<double>> x(sz(K), std::vector<double>(sz(T)));
    for (int k = 0; k < K; ++k)
        for (int b = 0; b < T; ++b) x[k][b] = config.interventions[k](b + 1);
    data.signals = SignalSet({std::vector<double>(sz(T), config.exogenous)}, false, std::move(x));

    const int total = config.n_groups * config.n_samples;
    std::vector<CountPanel> panels(sz(total));
    parallel_for(sz(total), resolve_threads(config.threads), [&](std::size_t s) {
        SimulationSpec spec{m, data.signals, CountPanel(P, M, 0), 1, T, 1, derive_seed(config.seed, 1 + s), 1};
        panels[s] = simulate(spec);
    });
    data.groups.resize(sz(config.n_groups));
    for (int g = 0; g < config.n_groups; ++g)
        for (int s = 0; s < config.n_samples; ++s)
            data.groups[g].push_back(std::move(panels[sz(g * config.n_samples + s)]));
    return data;
}

DatasetBundle synthetic_bundle(const SyntheticData& data, int group) {
    if (group < 0 || group >= static_cast<int>(data.groups.size())) throw std::out_of_range("synthetic group index");
    DatasetBundle b;
    for (int p = 0; p < data.truth.platforms(); ++p) b.platforms.push_back("p" + std::to_string(p + 1));
    for (int i = 0; i < data.truth.opinions(); ++i) b.opinions.push_back("o" + std::to_string(i + 1));
    for (int k = 0; k < data.truth.interventions(); ++k) b.interventions.push_back("X" + std::to_string(k + 1));
    b.samples = data.groups[group];
    b.signals = data.signals;
    return b;
}

// --- documents ----------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::string checksum_of(const json& body) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(body.dump())));
    return buf;
}

}  // namespace

json make_document(const std::string& schema, json body) {
    json doc;
    doc["schema"] = schema;
    doc["version"] = std::to_string(kSchemaMajor) + "." + std::to_string(kSchemaMinor);
    doc["checksum"] = checksum_of(body);
    doc["body"] = std::move(body);
    return doc;
}

json open_document(const json& doc, const std::string& schema) {
    if (!doc.is_object() || !doc.contains("schema") || !doc.contains("version") || !doc.contains("checksum") ||
        !doc.contains("body"))
        fail(DataErrorKind::malformed, "document lacks schema/version/checksum/body");
    if (doc["schema"] != schema)
        fail(DataErrorKind::schema_mismatch, "expected schema '" + schema + "', found " + doc["schema"].dump());
    const std::string version = doc["version"].is_string() ? doc["version"].get<std::string>() : "";
    int major = -1;
    const auto [ptr, ec] = std::from_chars(version.data(), version.data() + version.size(), major);
    if (ec != std::errc() || ptr == version.data())
        fail(DataErrorKind::version_mismatch, "unreadable version " + doc["version"].dump());
    if (major != kSchemaMajor)
        fail(DataErrorKind::version_mismatch, "document version " + version + " is not readable by version " +
                                                  std::to_string(kSchemaMajor) + ".x");
    if (doc["checksum"] != checksum_of(doc["body"]))
        fail(DataErrorKind::checksum_mismatch, "content does not match its checksum " + doc["checksum"].dump());
    return doc["body"];
}

void write_document(const fs::path& path, const std::string& schema, json body) {
    write_file(path, make_document(schema, std::move(body)).dump(2) + "\n");
}

json read_document(const fs::path& path, const std::string& schema) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        fail(DataErrorKind::malformed, path.string() + ": " + e.what());
    }
    try {
        return open_document(doc, schema);
    } catch (const DataFormatError& e) {
        throw DataFormatError(e.kind, path.string() + ": " + e.what());
    }
}

namespace {

template <std::size_t R>
json tensor_json(const Tensor<double, R>& t) {
    return {{"shape", t.shape()}, {"data", t.data()}};
}

template <std::size_t R>
Tensor<double, R> tensor_from(const json& j) {
    const auto shape = j.at("shape").get<std::array<std::size_t, R>>();
    Tensor<double, R> t(shape);
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != t.size()) fail(DataErrorKind::malformed, "tensor data does not match its shape");
    t.data() = std::move(data);
    return t;
}

template <class F>
auto guarded(const char* what, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const json::exception& e) {
        fail(DataErrorKind::malformed, std::string(what) + ": " + e.what());
    }
}

}  // namespace

json to_json(const Matrix& m) { return tensor_json(m); }
json to_json(const Array3& a) { return tensor_json(a); }
json to_json(const Array4& a) { return tensor_json(a); }

Matrix matrix_from_json(const json& j) {
    return guarded("matrix", [&] { return tensor_from<2>(j); });
}
Array3 array3_from_json(const json& j) {
    return guarded("array", [&] { return tensor_from<3>(j); });
}
Array4 array4_from_json(const json& j) {
    return guarded("array", [&] { return tensor_from<4>(j); });
}

json to_json(const Model& model) {
    return {
        {"volume",
         {{"mu", model.volume.mu},
          {"alpha", to_json(model.volume.alpha)},
          {"theta", model.volume.theta},
          {"mu_split", to_json(model.volume.mu_split)}}},
        {"share",
         {{"mu_split", to_json(model.share.mu_split)},
          {"gamma", to_json(model.share.gamma)},
          {"beta", to_json(model.share.beta)}}},
        {"scaling",
         {{"log_scale", model.scaling.log_scale},
          {"lam_mean", to_json(model.scaling.lam_mean)},
          {"lam_sd", to_json(model.scaling.lam_sd)},
          {"xbar_mean", model.scaling.xbar_mean},
          {"xbar_sd", model.scaling.xbar_sd},
          {"warnings", model.scaling.warnings}}},
    };
}

Model model_from_json(const json& j) {
    return guarded("model", [&] {
        Model m;
        const auto& v = j.at("volume");
        m.volume.mu = v.at("mu").get<std::vector<double>>();
        m.volume.alpha = tensor_from<2>(v.at("alpha"));
        m.volume.theta = v.at("theta").get<double>();
        m.volume.mu_split = tensor_from<2>(v.at("mu_split"));
        const auto& s = j.at("share");
        m.share.mu_split = tensor_from<2>(s.at("mu_split"));
        m.share.gamma = tensor_from<3>(s.at("gamma"));
        m.share.beta = tensor_from<4>(s.at("beta"));
        const auto& f = j.at("scaling");
        m.scaling.log_scale = f.at("log_scale").get<bool>();
        m.scaling.lam_mean = tensor_from<2>(f.at("lam_mean"));
        m.scaling.lam_sd = tensor_from<2>(f.at("lam_sd"));
        m.scaling.xbar_mean = f.at("xbar_mean").get<std::vector<double>>();
        m.scaling.xbar_sd = f.at("xbar_sd").get<std::vector<double>>();
        m.scaling.warnings = f.at("warnings").get<std::vector<std::string>>();
        const auto P = m.volume.mu.size();
        const auto M = m.share.mu_split.extent(1);
        const auto K = m.share.gamma.extent(2);
        if (m.volume.alpha.shape() != std::array<std::size_t, 2>{P, P} ||
            m.share.mu_split.extent(0) != P || m.share.gamma.extent(0) != P || m.share.gamma.extent(1) != M ||
            m.share.beta.shape() != std::array<std::size_t, 4>{P, P, M, M} || m.scaling.xbar_mean.size() != K ||
            m.scaling.xbar_sd.size() != K || m.scaling.lam_mean.shape() != std::array<std::size_t, 2>{P, M} ||
            m.scaling.lam_sd.shape() != std::array<std::size_t, 2>{P, M})
            fail(DataErrorKind::malformed, "model: inconsistent parameter shapes");
        return m;
    });
}

json to_json(const FitOptions& o) {
    return {{"max_iterations", o.max_iterations},
            {"gradient_tolerance", o.gradient_tolerance},
            {"parameter_transform", to_string(o.parameter_transform)},
            {"lambda_reg", o.lambda_reg},
            {"n_restarts", o.n_restarts},
            {"seed", o.seed},
            {"feature_mode", to_string(o.feature_mode)},
            {"fit_interventions", o.fit_interventions},
            {"threads", o.threads}};
}

FitOptions fit_options_from_json(const json& j) {
    return guarded("fit options", [&] {
        FitOptions o;
        o.max_iterations = j.value("max_iterations", o.max_iterations);
        o.gradient_tolerance = j.value("gradient_tolerance", o.gradient_tolerance);
        if (j.contains("parameter_transform"))
            o.parameter_transform = parameter_transform_from_string(j.at("parameter_transform").get<std::string>());
        o.lambda_reg = j.value("lambda_reg", o.lambda_reg);
        o.n_restarts = j.value("n_restarts", o.n_restarts);
        o.seed = j.value("seed", o.seed);
        if (j.contains("feature_mode")) o.feature_mode = feature_mode_from_string(j.at("feature_mode").get<std::string>());
        o.fit_interventions = j.value("fit_interventions", o.fit_interventions);
        o.threads = j.value("threads", o.threads);
        return o;
    });
}

json to_json(const FitDiagnostics& d) {
    return {{"converged", d.converged},
            {"iterations", d.iterations},
            {"gradient_norm", d.gradient_norm},
            {"termination", d.termination},
            {"restart_logliks", d.restart_logliks},
            {"best_restart", d.best_restart},
            {"warnings", d.warnings}};
}

FitDiagnostics diagnostics_from_json(const json& j) {
    return guarded("diagnostics", [&] {
        FitDiagnostics d;
        d.converged = j.at("converged").get<bool>();
        d.iterations = j.at("iterations").get<int>();
        d.gradient_norm = j.at("gradient_norm").get<double>();
        d.termination = j.at("termination").get<std::string>();
        d.restart_logliks = j.at("restart_logliks").get<std::vector<double>>();
        d.best_restart = j.at("best_restart").get<int>();
        d.warnings = j.at("warnings").get<std::vector<std::string>>();
        return d;
    });
}

json to_json(const FitResult& f) {
    return {{"model", to_json(f.model)},
            {"loglik1", f.loglik1},
            {"loglik2", f.loglik2},
            {"converged", f.converged},
            {"iterations", f.iterations},
            {"gradient_norm", f.gradient_norm},
            {"tier1", to_json(f.tier1)},
            {"tier2", to_json(f.tier2)}};
}

FitResult fit_result_from_json(const json& j) {
    return guarded("fit", [&] {
        FitResult f;
        f.model = model_from_json(j.at("model"));
        f.loglik1 = j.at("loglik1").get<double>();
        f.loglik2 = j.at("loglik2").get<double>();
        f.converged = j.at("converged").get<bool>();
        f.iterations = j.at("iterations").get<int>();
        f.gradient_norm = j.at("gradient_norm").get<double>();
        f.tier1 = diagnostics_from_json(j.at("tier1"));
        f.tier2 = diagnostics_from_json(j.at("tier2"));
        return f;
    });
}

void save_model(const ModelFile& file, const fs::path& path) {
    write_document(path, "omm.model",
                   {{"fit", to_json(file.fit)}, {"options", to_json(file.options)}, {"provenance", file.provenance}});
}

ModelFile load_model(const fs::path& path) {
    const json body = read_document(path, "omm.model");
    return guarded("model file", [&] {
        ModelFile f;
        f.fit = fit_result_from_json(body.at("fit"));
        f.options = fit_options_from_json(body.at("options"));
        f.provenance = body.at("provenance");
        return f;
    });
}

}  // namespace omm
