#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bnt/matrix.hpp"
#include "bnt/rng.hpp"

namespace bnt {

/// One subject: symmetric V x V connectivity with unit diagonal.
struct ConnectivityGraph {
    std::uint32_t subject_id = 0;
    int label = 0;
    std::uint16_t site = 0;
    Matrix matrix;

    friend bool operator==(const ConnectivityGraph&, const ConnectivityGraph&) = default;
};

struct GeneratorSpec {
    std::size_t nodes = 32;
    std::size_t modules = 4;
    std::size_t subjects_per_class = 200;
    std::size_t sites = 4;
    double within_strength = 0.9;
    double between_strength_class0 = 0.15;
    double between_strength_class1 = 0.35;
    double site_noise = 0.5;
    std::size_t series_length = 256;
    std::uint64_t seed = 42;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Synthesizes module-structured node series per subject and returns their
/// Pearson correlation matrices. Entries are rounded to float32 precision so
/// that a write/read round trip is exact.
std::vector<ConnectivityGraph> generate_dataset(const GeneratorSpec& spec);

/// Pearson correlation of the rows of `series` (nodes x time); unit diagonal,
/// exactly symmetric, clamped to [-1, 1].
Matrix pearson_correlation(const Matrix& series);

enum class DataErrorKind { BadMagic, BadVersion, Truncation, NodeCountMismatch, Io, Format };

std::string_view to_string(DataErrorKind k);

class DataError : public std::runtime_error {
public:
    DataError(DataErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    DataErrorKind kind() const noexcept { return kind_; }

private:
    DataErrorKind kind_;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

/// Packed little-endian "BNTD" format. `nodes` is used only for an empty dataset.
std::vector<std::uint8_t> encode_dataset(std::span<const ConnectivityGraph> graphs, std::uint32_t nodes = 0);
std::vector<ConnectivityGraph> decode_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(std::span<const ConnectivityGraph> graphs, const std::filesystem::path& path,
                   std::uint32_t nodes = 0);
std::vector<ConnectivityGraph> read_dataset(const std::filesystem::path& path);

struct SplitPlan {
    std::uint64_t seed = 0;
    std::array<double, 3> fractions{0.7, 0.1, 0.2};
    bool stratified = true;
    std::vector<std::uint32_t> train, val, test;
    std::vector<std::string> warnings;

    friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

/// Within every (site, label) cell: shuffle, then apportion by largest
/// remainder. Throws when the fractions do not sum to 1.
SplitPlan stratified_split(std::span<const ConnectivityGraph> graphs, std::array<double, 3> fractions,
                           std::uint64_t seed);

/// Single shuffled pool apportioned by largest remainder, ignoring site and label.
SplitPlan random_split(std::span<const ConnectivityGraph> graphs, std::array<double, 3> fractions,
                       std::uint64_t seed);

/// Largest-remainder apportionment of `n` items over `fractions`.
std::vector<std::size_t> largest_remainder(std::size_t n, std::span<const double> fractions);

std::string serialize_split(const SplitPlan& plan);
SplitPlan parse_split(const std::string& text);
void write_split(const SplitPlan& plan, const std::filesystem::path& path);
SplitPlan read_split(const std::filesystem::path& path);

/// Graphs whose subject_id is in `ids`, in the order of `ids`.
std::vector<ConnectivityGraph> select_subjects(std::span<const ConnectivityGraph> graphs,
                                               std::span<const std::uint32_t> ids);

}  // namespace bnt
