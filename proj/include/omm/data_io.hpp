#pragma once

#include "omm/estimation.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace omm {

enum class DataErrorKind {
    malformed,
    missing_series,
    negative_count,
    length_mismatch,
    unknown_label,
    duplicate_entry,
    checksum_mismatch,
    version_mismatch,
    schema_mismatch,
};

[[nodiscard]] std::string to_string(DataErrorKind kind);

/// Structured loader/serializer failure.
struct DataFormatError : DataError {
    DataFormatError(DataErrorKind kind, const std::string& what)
        : DataError(to_string(kind) + ": " + what), kind(kind) {}
    DataErrorKind kind;
};

/// One dataset on disk: counts (one or more i.i.d. samples), signals, labels.
struct DatasetBundle {
    std::vector<std::string> platforms;
    std::vector<std::string> opinions;
    std::vector<std::string> interventions;
    std::vector<CountPanel> samples;
    SignalSet signals;
    std::string bin_width{"1"};

    [[nodiscard]] Dimensions dimensions() const;
    void validate() const;
    bool operator==(const DatasetBundle& other) const;
};

/// Reads `dir/counts.csv` (or `counts_000.csv`, `counts_001.csv`, ... for
/// several samples), `dir/signals.csv` and the optional `dir/meta.json`.
[[nodiscard]] DatasetBundle load_dataset(const std::filesystem::path& dir);
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);

/// Parsers used by load_dataset; `source` names the input in error messages.
/// With `labels_fixed` unknown labels are rejected, otherwise they are
/// appended in order of first appearance.
[[nodiscard]] CountPanel parse_counts_csv(const std::string& text, const std::string& source,
                                          std::vector<std::string>& platforms, std::vector<std::string>& opinions,
                                          bool labels_fixed);
[[nodiscard]] SignalSet parse_signals_csv(const std::string& text, const std::string& source,
                                          const std::vector<std::string>& opinions,
                                          std::vector<std::string>& interventions, bool labels_fixed, int bins);

/// news_k(t) - (max news_k / max S) * S(t).
[[nodiscard]] std::vector<double> standardize_intervention(std::span<const double> news, std::span<const double> s);

// --- synthetic data -------------------------------------------------------

struct Sinusoid {
    double amplitude{0.0};
    double frequency{0.0};
    double phase{0.0};
    double offset{0.0};

    [[nodiscard]] double operator()(int t) const { return amplitude * std::sin(frequency * t + phase) + offset; }
};

struct SyntheticConfig {
    int platforms{2};
    int opinions{2};
    int bins{300};
    int n_samples{20};
    int n_groups{20};
    std::uint64_t seed{0};
    Matrix mu_split = [] {
        Matrix m({2, 2});
        m(0, 0) = 15.0;
        m(0, 1) = 5.0;
        m(1, 0) = 5.0;
        m(1, 1) = 20.0;
        return m;
    }();
    double theta{0.5};
    double alpha_max{0.5};
    double beta_max{0.1};
    double gamma_max{0.1};
    /// Fixed truths; drawn uniformly on [0, max) when absent.
    std::optional<Matrix> alpha;
    std::optional<Array3> gamma;
    std::optional<Array4> beta;
    double exogenous{1.0};  // S(t)
    std::vector<Sinusoid> interventions{{5.0, 0.1, 0.0, 5.0}, {10.0, 0.05, 1.25, 10.0}};
    int threads{1};

    void validate() const;
};

/// The truth uses raw (identity-scaled) share features.
struct SyntheticData {
    Model truth;
    SignalSet signals;
    std::vector<std::vector<CountPanel>> groups;  // n_groups × n_samples
};

[[nodiscard]] SyntheticData generate_synthetic(const SyntheticConfig& config);
[[nodiscard]] DatasetBundle synthetic_bundle(const SyntheticData& data, int group);

// --- structured documents -------------------------------------------------

using json = nlohmann::json;

inline constexpr int kSchemaMajor = 1;
inline constexpr int kSchemaMinor = 0;

/// FNV-1a 64-bit over a byte string.
[[nodiscard]] std::uint64_t fnv1a64(std::string_view bytes);

/// Wraps a body with schema tag, version and checksum.
[[nodiscard]] json make_document(const std::string& schema, json body);
/// Verifies schema, version and checksum; returns the body.
[[nodiscard]] json open_document(const json& document, const std::string& schema);

void write_document(const std::filesystem::path& path, const std::string& schema, json body);
[[nodiscard]] json read_document(const std::filesystem::path& path, const std::string& schema);

[[nodiscard]] json to_json(const Matrix& m);
[[nodiscard]] json to_json(const Array3& a);
[[nodiscard]] json to_json(const Array4& a);
[[nodiscard]] json to_json(const Model& model);
[[nodiscard]] json to_json(const FitOptions& options);
[[nodiscard]] json to_json(const FitDiagnostics& diagnostics);
[[nodiscard]] json to_json(const FitResult& fit);

[[nodiscard]] Matrix matrix_from_json(const json& j);
[[nodiscard]] Array3 array3_from_json(const json& j);
[[nodiscard]] Array4 array4_from_json(const json& j);
[[nodiscard]] Model model_from_json(const json& j);
[[nodiscard]] FitOptions fit_options_from_json(const json& j);
[[nodiscard]] FitDiagnostics diagnostics_from_json(const json& j);
[[nodiscard]] FitResult fit_result_from_json(const json& j);

/// Everything a model file holds.
struct ModelFile {
    FitResult fit;
    FitOptions options;
    json provenance = json::object();  // resolved config, seed, dataset path
};

void save_model(const ModelFile& file, const std::filesystem::path& path);
[[nodiscard]] ModelFile load_model(const std::filesystem::path& path);

}  // namespace omm
