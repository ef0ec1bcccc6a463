#include "pico/datagen.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pico {

int set_size(LabelSet s) { return std::popcount(s); }

std::vector<int> members(LabelSet s) {
    std::vector<int> out;
    for (int j = 0; j < kMaxClasses; ++j)
        if (contains(s, j)) out.push_back(j);
    return out;
}

MatrixFlip successor_flip_matrix(int c) {
    Tensor m = Tensor::zeros(c, c);
    for (int y = 0; y < c; ++y) {
        m(y, y) = 1.0;
        if (c > 1) m(y, (y + 1) % c) = 0.5;
    }
    return {m};
}

MatrixFlip graded_flip_matrix(int c) {
    static constexpr double kBand[] = {0.9, 0.7, 0.5, 0.3, 0.1};
    Tensor m = Tensor::zeros(c, c);
    for (int y = 0; y < c; ++y) {
        m(y, y) = 1.0;
        // Offsets that would wrap back onto the truth are dropped for small C.
        for (int off = 1; off <= 5 && off < c; ++off) m(y, (y + off) % c) = kBand[off - 1];
    }
    return {m};
}

HierarchicalFlip grouped_flip(int c, int group_size, double q) {
    if (group_size < 1 || c % group_size != 0)
        throw std::invalid_argument("group size must divide the number of classes");
    HierarchicalFlip h;
    h.q = q;
    for (int j = 0; j < c; ++j) h.superclass_of.push_back(j / group_size);
    return h;
}

void validate(const FlipSpec& spec, int c) {
    auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, UniformFlip>) {
                if (!prob_ok(s.q)) throw std::invalid_argument("flip probability q must lie in [0,1]");
            } else if constexpr (std::is_same_v<T, MatrixFlip>) {
                if (s.inclusion.rows() != static_cast<std::size_t>(c) ||
                    s.inclusion.cols() != static_cast<std::size_t>(c))
                    throw std::invalid_argument("flip matrix must be C×C");
                for (int y = 0; y < c; ++y)
                    for (int j = 0; j < c; ++j) {
                        const double p = s.inclusion(y, j);
                        if (y == j ? p != 1.0 : !prob_ok(p))
                            throw std::invalid_argument("flip matrix needs unit diagonal and entries in [0,1]");
                    }
            } else {
                if (!prob_ok(s.q)) throw std::invalid_argument("flip probability q must lie in [0,1]");
                if (s.superclass_of.size() != static_cast<std::size_t>(c))
                    throw std::invalid_argument("superclass partition must cover every class");
            }
        },
        spec);
}

namespace {

double inclusion_probability(const FlipSpec& spec, int truth, int label) {
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, UniformFlip>) {
                return s.q;
            } else if constexpr (std::is_same_v<T, MatrixFlip>) {
                return s.inclusion(truth, label);
            } else {
                return s.superclass_of[truth] == s.superclass_of[label] ? s.q : 0.0;
            }
        },
        spec);
}

// One Bernoulli draw per wrong label, in label order.
LabelSet flip_negatives(const FlipSpec& spec, int truth, int c, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LabelSet s = 0;
    for (int j = 0; j < c; ++j) {
        if (j == truth) continue;
        if (u(rng) < inclusion_probability(spec, truth, j)) s |= singleton(j);
    }
    return s;
}

int infer_classes(const std::vector<LabeledExample>& data, const FlipSpec& spec) {
    int c = 0;
    for (const auto& e : data) c = std::max(c, e.true_label + 1);
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, MatrixFlip>) c = static_cast<int>(s.inclusion.rows());
            else if constexpr (std::is_same_v<T, HierarchicalFlip>) c = static_cast<int>(s.superclass_of.size());
        },
        spec);
    return c;
}

}  // namespace

BlobModel make_blob_model(int c, std::size_t dim, double spread, Rng& rng) {
    if (c < 2 || dim < 2) throw std::invalid_argument("blobs need C ≥ 2 and d_in ≥ 2");
    if (c > kMaxClasses) throw std::invalid_argument("at most 64 classes are supported");
    if (spread < 0.0) throw std::invalid_argument("blob spread must be non-negative");
    BlobModel m{c, dim, spread, Tensor::zeros(c, dim)};
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < c; ++k) {
        auto row = m.means.row(k);
        for (double& v : row) v = normal(rng);
        const double n = norm2(row);
        for (double& v : row) v /= n;
    }
    return m;
}

std::vector<LabeledExample> sample_blobs(const BlobModel& model, std::size_t n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<LabeledExample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % model.num_classes);
        auto mean = model.means.row(y);
        out[i].true_label = y;
        out[i].features.resize(model.dim);
        for (std::size_t j = 0; j < model.dim; ++j) out[i].features[j] = mean[j] + model.spread * normal(rng);
    }
    return out;
}

std::vector<LabeledExample> make_gaussian_blobs(std::size_t n, int c, std::size_t dim, double spread,
                                                std::uint64_t seed) {
    if (n < static_cast<std::size_t>(c)) throw std::invalid_argument("blobs need n ≥ C");
    Rng rng(seed);
    const BlobModel model = make_blob_model(c, dim, spread, rng);
    return sample_blobs(model, n, rng);
}

std::vector<PartialExample> apply_flip(const std::vector<LabeledExample>& data, const FlipSpec& spec,
                                       std::uint64_t seed) {
    const int c = infer_classes(data, spec);
    validate(spec, c);
    Rng rng(seed);
    std::vector<PartialExample> out;
    out.reserve(data.size());
    for (const auto& e : data) {
        const LabelSet s = flip_negatives(spec, e.true_label, c, rng) | singleton(e.true_label);
        out.push_back({e.features, s, e.true_label});
    }
    return out;
}

std::vector<PartialExample> apply_noise(const std::vector<PartialExample>& data,
                                        const std::vector<LabeledExample>& originals,
                                        const NoiseSpec& noise, const FlipSpec& flip,
                                        std::uint64_t seed) {
    if (data.size() != originals.size()) throw std::invalid_argument("apply_noise: lists differ in length");
    if (!(noise.eta >= 0.0 && noise.eta < 1.0)) throw std::invalid_argument("noise rate η must lie in [0,1)");
    const int c = infer_classes(originals, flip);
    validate(flip, c);
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<PartialExample> out = data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(u(rng) < noise.eta)) continue;
        const int y = originals[i].true_label;
        bool reachable = false;
        for (int j = 0; j < c; ++j)
            if (j != y && inclusion_probability(flip, y, j) > 0.0) reachable = true;
        LabelSet s = 0;
        if (!reachable) {
            std::uniform_int_distribution<int> pick(0, c - 2);
            const int r = pick(rng);
            s = singleton(r >= y ? r + 1 : r);
        } else {
            for (int attempt = 0; s == 0; ++attempt) {
                if (attempt == kMaxRegenerations)
                    throw std::runtime_error("apply_noise: candidate regeneration did not terminate");
                s = flip_negatives(flip, y, c, rng);
            }
        }
        out[i].candidates = s;
    }
    return out;
}

std::vector<double> augment(std::span<const double> x, double sigma, double mask_prob, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(x.begin(), x.end());
    for (double& e : v) e += sigma * normal(rng);
    for (double& e : v)
        if (u(rng) < mask_prob) e = 0.0;
    return v;
}

Views two_views(std::span<const double> x, const AugmentSpec& spec, Rng& rng) {
    Views v;
    v.query = augment(x, spec.noise_sigma_query, spec.mask_prob_query, rng);
    v.key = augment(x, spec.noise_sigma_key, spec.mask_prob_key, rng);
    return v;
}

Views two_views(std::span<const double> x, const AugmentSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    return two_views(x, spec, rng);
}

// Dataset file ------------------------------------------------------------

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double parse_double(std::string_view text) {
    while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
    while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw DataFormatError("not a number: '" + std::string(text) + "'");
    return v;
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            parts.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return parts;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

long parse_int(std::string_view s, const std::string& where) {
    s = trim(s);
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw DataFormatError(where + ": expected an integer, got '" + std::string(s) + "'");
    return v;
}

}  // namespace

void write_dataset(std::ostream& out, const PartialDataset& data) {
    out << "pll v1 n=" << data.size() << " d=" << data.dim << " C=" << data.num_classes << '\n';
    for (const auto& e : data.examples) {
        for (std::size_t j = 0; j < e.features.size(); ++j) {
            if (j) out << ',';
            out << format_double(e.features[j]);
        }
        out << " | ";
        bool first = true;
        for (int c : members(e.candidates)) {
            if (!first) out << ';';
            out << c;
            first = false;
        }
        out << " | " << e.hidden_true_label << '\n';
    }
}

PartialDataset read_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataFormatError("line 1: missing header");
    PartialDataset data;
    long n = -1, d = -1, c = -1;
    {
        auto fields = split(trim(line), ' ');
        if (fields.size() != 5 || fields[0] != "pll" || fields[1] != "v1")
            throw DataFormatError("line 1: expected 'pll v1 n=<n> d=<d> C=<C>'");
        for (std::size_t k = 2; k < 5; ++k) {
            auto kv = split(fields[k], '=');
            if (kv.size() != 2) throw DataFormatError("line 1: malformed field '" + std::string(fields[k]) + "'");
            const long v = parse_int(kv[1], "line 1");
            if (kv[0] == "n") n = v;
            else if (kv[0] == "d") d = v;
            else if (kv[0] == "C") c = v;
            else throw DataFormatError("line 1: unknown field '" + std::string(kv[0]) + "'");
        }
        if (n < 0 || d < 1 || c < 1 || c > kMaxClasses) throw DataFormatError("line 1: invalid n, d or C");
    }
    data.num_classes = static_cast<int>(c);
    data.dim = static_cast<std::size_t>(d);
    data.examples.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        const std::string where = "line " + std::to_string(i + 2);
        if (!std::getline(in, line)) throw DataFormatError(where + ": unexpected end of file");
        auto cols = split(trim(line), '|');
        if (cols.size() != 3) throw DataFormatError(where + ": expected 3 '|'-separated fields");
        PartialExample e;
        for (auto f : split(trim(cols[0]), ',')) {
            try {
                e.features.push_back(parse_double(trim(f)));
            } catch (const DataFormatError& err) {
                throw DataFormatError(where + ": " + err.what());
            }
        }
        if (e.features.size() != data.dim)
            throw DataFormatError(where + ": expected " + std::to_string(d) + " features, got " +
                                  std::to_string(e.features.size()));
        auto cands = trim(cols[1]);
        if (cands.empty()) throw DataFormatError(where + ": empty candidate list");
        for (auto cs : split(cands, ';')) {
            const long label = parse_int(cs, where);
            if (label < 0 || label >= c)
                throw DataFormatError(where + ": candidate index " + std::to_string(label) + " outside [0," +
                                      std::to_string(c) + ")");
            e.candidates |= singleton(static_cast<int>(label));
        }
        const long y = parse_int(cols[2], where);
        if (y < 0 || y >= c) throw DataFormatError(where + ": true label outside [0,C)");
        e.hidden_true_label = static_cast<int>(y);
        data.examples.push_back(std::move(e));
    }
    return data;
}

void save_dataset(const std::filesystem::path& path, const PartialDataset& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_dataset(out, data);
}

PartialDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return read_dataset(in);
}

}  // namespace pico
