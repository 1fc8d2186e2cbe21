#include "bnt/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace bnt {

namespace {

constexpr std::uint64_t kSiteStream = 0x5173'0000'0000ULL;
constexpr std::array<char, 4> kMagic{'B', 'N', 'T', 'D'};
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kRecordHeaderBytes = 8;

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

bool in_open_unit(double v) { return v > 0.0 && v < 1.0; }

}  // namespace

void GeneratorSpec::validate() const {
    require(nodes >= 2, "generator: --nodes must be >= 2");
    require(modules >= 1 && modules <= nodes, "generator: --modules must be in [1, nodes]");
    require(subjects_per_class >= 1, "generator: --subjects-per-class must be >= 1");
    require(sites >= 1 && sites <= 0xFFFF, "generator: --sites must be in [1, 65535]");
    require(in_open_unit(within_strength), "generator: --within must be in (0, 1)");
    require(in_open_unit(between_strength_class0), "generator: --between0 must be in (0, 1)");
    require(in_open_unit(between_strength_class1), "generator: --between1 must be in (0, 1)");
    require(site_noise >= 0.0 && std::isfinite(site_noise), "generator: --site-noise must be >= 0");
    require(series_length >= 3, "generator: --series-length must be >= 3");
    require(2 * subjects_per_class <= 0xFFFFFFFFULL, "generator: too many subjects");
}

Matrix pearson_correlation(const Matrix& series) {
    const std::size_t n = series.rows();
    const std::size_t t = series.cols();
    Matrix centered = series;
    for (std::size_t i = 0; i < n; ++i) {
        auto r = centered.row(i);
        const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(t);
        for (auto& v : r) v -= mean;
        const double norm = std::sqrt(dot(r, r));
        if (norm > 0.0)
            for (auto& v : r) v /= norm;
    }
    Matrix corr(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        corr(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = std::clamp(dot(centered.row(i), centered.row(j)), -1.0, 1.0);
            corr(i, j) = c;
            corr(j, i) = c;
        }
    }
    return corr;
}

std::vector<ConnectivityGraph> generate_dataset(const GeneratorSpec& spec) {
    spec.validate();
    const std::size_t v = spec.nodes;
    const std::size_t t = spec.series_length;
    const std::size_t k = spec.modules;

    std::vector<std::size_t> module_of(v);
    for (std::size_t i = 0; i < v; ++i) module_of[i] = i * k / v;

    // Each site contributes a fixed series with fixed per-node loadings.
    std::vector<Matrix> site_pattern;
    for (std::size_t s = 0; s < spec.sites; ++s) {
        Rng rng(derive_seed(derive_seed(spec.seed, kSiteStream), s));
        Matrix common(1, t);
        for (auto& x : common.data()) x = rng.normal();
        Matrix pattern(v, t);
        for (std::size_t i = 0; i < v; ++i) {
            const double loading = rng.normal();
            for (std::size_t j = 0; j < t; ++j) pattern(i, j) = spec.site_noise * loading * common(0, j);
        }
        site_pattern.push_back(std::move(pattern));
    }

    const std::size_t n = 2 * spec.subjects_per_class;
    std::vector<ConnectivityGraph> graphs;
    graphs.reserve(n);
    for (std::size_t id = 0; id < n; ++id) {
        Rng rng(derive_seed(spec.seed, id));
        ConnectivityGraph g;
        g.subject_id = static_cast<std::uint32_t>(id);
        g.label = static_cast<int>(id % 2);
        g.site = static_cast<std::uint16_t>(rng.below(spec.sites));
        const double between = g.label == 0 ? spec.between_strength_class0 : spec.between_strength_class1;

        Matrix latent(k, t);
        for (auto& x : latent.data()) x = rng.normal();
        std::vector<double> latent_sum(t, 0.0);
        for (std::size_t m = 0; m < k; ++m)
            for (std::size_t j = 0; j < t; ++j) latent_sum[j] += latent(m, j);

        Matrix series(v, t);
        const auto& site = site_pattern[g.site];
        for (std::size_t i = 0; i < v; ++i) {
            const std::size_t m = module_of[i];
            for (std::size_t j = 0; j < t; ++j) {
                const double others = k > 1 ? (latent_sum[j] - latent(m, j)) / static_cast<double>(k - 1) : 0.0;
                series(i, j) = spec.within_strength * latent(m, j) + between * others + rng.normal() + site(i, j);
            }
        }
        g.matrix = pearson_correlation(series);
        for (auto& x : g.matrix.data()) x = static_cast<double>(static_cast<float>(x));
        graphs.push_back(std::move(g));
    }
    return graphs;
}

std::string_view to_string(DataErrorKind k) {
    switch (k) {
        case DataErrorKind::BadMagic: return "bad magic";
        case DataErrorKind::BadVersion: return "bad version";
        case DataErrorKind::Truncation: return "truncation";
        case DataErrorKind::NodeCountMismatch: return "node count mismatch";
        case DataErrorKind::Io: return "i/o";
        case DataErrorKind::Format: return "format";
    }
    return "?";
}

namespace {

class ByteWriter {
public:
    explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

private:
    std::vector<std::uint8_t>& out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
    std::size_t remaining() const { return in_.size() - pos_; }
    void need(std::size_t n, const char* what) const {
        if (remaining() < n)
            throw DataError(DataErrorKind::Truncation, std::string("dataset truncated while reading ") + what);
    }
    std::uint8_t u8() { return in_[pos_++]; }
    std::uint16_t u16() {
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_dataset(std::span<const ConnectivityGraph> graphs, std::uint32_t nodes) {
    const std::uint32_t v = graphs.empty() ? nodes : static_cast<std::uint32_t>(graphs.front().matrix.rows());
    for (const auto& g : graphs) {
        if (g.matrix.rows() != v || g.matrix.cols() != v)
            throw DataError(DataErrorKind::NodeCountMismatch,
                            "subject " + std::to_string(g.subject_id) + " has a " + shape_string(g.matrix) +
                                " matrix, expected " + std::to_string(v) + "x" + std::to_string(v));
        if (g.label != 0 && g.label != 1)
            throw DataError(DataErrorKind::Format, "subject " + std::to_string(g.subject_id) + " has a non-binary label");
    }
    std::vector<std::uint8_t> bytes;
    bytes.reserve(kHeaderBytes + graphs.size() * (kRecordHeaderBytes + 4ULL * v * v));
    ByteWriter w(bytes);
    for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u32(kDatasetVersion);
    w.u32(v);
    w.u32(static_cast<std::uint32_t>(graphs.size()));
    for (const auto& g : graphs) {
        w.u32(g.subject_id);
        w.u8(static_cast<std::uint8_t>(g.label));
        w.u16(g.site);
        w.u8(0);
        for (double x : g.matrix.data()) w.f32(static_cast<float>(x));
    }
    return bytes;
}

std::vector<ConnectivityGraph> decode_dataset(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const std::size_t probe = std::min(bytes.size(), kMagic.size());
    for (std::size_t i = 0; i < probe; ++i)
        if (bytes[i] != static_cast<std::uint8_t>(kMagic[i]))
            throw DataError(DataErrorKind::BadMagic, "not a BNTD dataset (bad magic)");
    r.need(kHeaderBytes, "header");
    for (std::size_t i = 0; i < kMagic.size(); ++i) r.u8();
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw DataError(DataErrorKind::BadVersion, "unsupported dataset version " + std::to_string(version));
    const std::uint32_t v = r.u32();
    const std::uint32_t n = r.u32();
    const std::size_t cells = static_cast<std::size_t>(v) * v;
    std::vector<ConnectivityGraph> graphs;
    graphs.reserve(std::min<std::size_t>(n, r.remaining() / (kRecordHeaderBytes + 4 * std::max<std::size_t>(cells, 1)) + 1));
    for (std::uint32_t i = 0; i < n; ++i) {
        r.need(kRecordHeaderBytes + 4 * cells, "record");
        ConnectivityGraph g;
        g.subject_id = r.u32();
        const std::uint8_t label = r.u8();
        if (label > 1) throw DataError(DataErrorKind::Format, "record " + std::to_string(i) + " has label " + std::to_string(label));
        g.label = label;
        g.site = r.u16();
        if (r.u8() != 0) throw DataError(DataErrorKind::Format, "record " + std::to_string(i) + " has non-zero padding");
        g.matrix = Matrix(v, v);
        for (auto& x : g.matrix.data()) x = static_cast<double>(r.f32());
        graphs.push_back(std::move(g));
    }
    if (r.remaining() != 0)
        throw DataError(DataErrorKind::Format, std::to_string(r.remaining()) + " trailing bytes after last record");
    return graphs;
}

void write_dataset(std::span<const ConnectivityGraph> graphs, const std::filesystem::path& path, std::uint32_t nodes) {
    const auto bytes = encode_dataset(graphs, nodes);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(DataErrorKind::Io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(DataErrorKind::Io, "write failed: " + path.string());
}

std::vector<ConnectivityGraph> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataErrorKind::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_dataset(bytes);
}

std::vector<std::size_t> largest_remainder(std::size_t n, std::span<const double> fractions) {
    std::vector<std::size_t> counts(fractions.size());
    std::vector<double> remainder(fractions.size());
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < fractions.size(); ++j) {
        const double quota = fractions[j] * static_cast<double>(n);
        counts[j] = static_cast<std::size_t>(std::floor(quota));
        remainder[j] = quota - static_cast<double>(counts[j]);
        assigned += counts[j];
    }
    std::vector<std::size_t> order(fractions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % order.size()]];
    return counts;
}

namespace {

void check_fractions(std::array<double, 3> f) {
    for (double x : f)
        if (!(x >= 0.0) || x > 1.0) throw std::invalid_argument("split: fractions must lie in [0, 1]");
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
}

void apportion(std::vector<std::uint32_t> ids, const std::array<double, 3>& fractions, Rng& rng, SplitPlan& plan,
               const std::string& cell_name) {
    rng.shuffle(std::span(ids));
    const auto counts = largest_remainder(ids.size(), fractions);
    const auto nonzero = static_cast<std::size_t>(std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0.0; }));
    if (ids.size() < nonzero)
        plan.warnings.push_back(cell_name + " has " + std::to_string(ids.size()) + " subjects for " +
                                std::to_string(nonzero) + " non-empty splits");
    std::size_t pos = 0;
    std::array<std::vector<std::uint32_t>*, 3> dest{&plan.train, &plan.val, &plan.test};
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t c = 0; c < counts[j]; ++c) dest[j]->push_back(ids[pos++]);
}

void sort_lists(SplitPlan& plan) {
    std::sort(plan.train.begin(), plan.train.end());
    std::sort(plan.val.begin(), plan.val.end());
    std::sort(plan.test.begin(), plan.test.end());
}

}  // namespace

SplitPlan stratified_split(std::span<const ConnectivityGraph> graphs, std::array<double, 3> fractions,
                           std::uint64_t seed) {
    check_fractions(fractions);
    SplitPlan plan{seed, fractions, true, {}, {}, {}, {}};
    std::map<std::pair<int, int>, std::vector<std::uint32_t>> cells;
    for (const auto& g : graphs) cells[{g.site, g.label}].push_back(g.subject_id);
    Rng rng(seed);
    for (auto& [key, ids] : cells) {
        std::sort(ids.begin(), ids.end());
        apportion(std::move(ids), fractions, rng, plan,
                  "cell (site " + std::to_string(key.first) + ", label " + std::to_string(key.second) + ")");
    }
    sort_lists(plan);
    return plan;
}

SplitPlan random_split(std::span<const ConnectivityGraph> graphs, std::array<double, 3> fractions,
                       std::uint64_t seed) {
    check_fractions(fractions);
    SplitPlan plan{seed, fractions, false, {}, {}, {}, {}};
    std::vector<std::uint32_t> ids;
    for (const auto& g : graphs) ids.push_back(g.subject_id);
    std::sort(ids.begin(), ids.end());
    Rng rng(seed);
    apportion(std::move(ids), fractions, rng, plan, "dataset");
    sort_lists(plan);
    return plan;
}

namespace {

std::string join_ids(const std::vector<std::uint32_t>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(ids[i]);
    }
    return s;
}

std::vector<std::uint32_t> parse_ids(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::uint32_t> ids;
    long long x;
    while (is >> x) {
        if (x < 0 || x > 0xFFFFFFFFLL) throw DataError(DataErrorKind::Format, "split: subject id out of range");
        ids.push_back(static_cast<std::uint32_t>(x));
    }
    if (!is.eof()) throw DataError(DataErrorKind::Format, "split: malformed id list");
    return ids;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string serialize_split(const SplitPlan& plan) {
    std::ostringstream os;
    os.precision(17);
    os << "# bnt split plan\n";
    os << "seed = " << plan.seed << '\n';
    os << "fractions = " << plan.fractions[0] << ' ' << plan.fractions[1] << ' ' << plan.fractions[2] << '\n';
    os << "stratified = " << (plan.stratified ? "true" : "false") << '\n';
    os << "train = " << join_ids(plan.train) << '\n';
    os << "val = " << join_ids(plan.val) << '\n';
    os << "test = " << join_ids(plan.test) << '\n';
    for (const auto& w : plan.warnings) os << "warning = " << w << '\n';
    return os.str();
}

SplitPlan parse_split(const std::string& text) {
    SplitPlan plan;
    std::istringstream is(text);
    std::string line;
    bool seen_seed = false, seen_train = false, seen_val = false, seen_test = false;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError(DataErrorKind::Format, "split: expected key = value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "seed") {
            plan.seed = std::stoull(value);
            seen_seed = true;
        } else if (key == "fractions") {
            std::istringstream fs(value);
            if (!(fs >> plan.fractions[0] >> plan.fractions[1] >> plan.fractions[2]))
                throw DataError(DataErrorKind::Format, "split: malformed fractions");
        } else if (key == "stratified") {
            plan.stratified = value == "true";
        } else if (key == "train") {
            plan.train = parse_ids(value);
            seen_train = true;
        } else if (key == "val") {
            plan.val = parse_ids(value);
            seen_val = true;
        } else if (key == "test") {
            plan.test = parse_ids(value);
            seen_test = true;
        } else if (key == "warning") {
            plan.warnings.push_back(value);
        } else {
            throw DataError(DataErrorKind::Format, "split: unknown key '" + key + "'");
        }
    }
    if (!(seen_seed && seen_train && seen_val && seen_test))
        throw DataError(DataErrorKind::Format, "split: missing seed/train/val/test entries");
    return plan;
}

void write_split(const SplitPlan& plan, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(DataErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << serialize_split(plan);
}

SplitPlan read_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(DataErrorKind::Io, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_split(ss.str());
}

std::vector<ConnectivityGraph> select_subjects(std::span<const ConnectivityGraph> graphs,
                                               std::span<const std::uint32_t> ids) {
    std::map<std::uint32_t, const ConnectivityGraph*> by_id;
    for (const auto& g : graphs) by_id[g.subject_id] = &g;
    std::vector<ConnectivityGraph> out;
    out.reserve(ids.size());
    for (auto id : ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end())
            throw DataError(DataErrorKind::Format, "split references subject " + std::to_string(id) + " absent from dataset");
        out.push_back(*it->second);
    }
    return out;
}

}  // namespace bnt
