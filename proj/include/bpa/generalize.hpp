#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bpa/env.hpp"
#include "bpa/rng.hpp"

namespace bpa {

/// Index of a state cluster; advice is stored per cluster rather than per raw state.
struct ClusterId {
    std::size_t value = 0;

    friend auto operator<=>(const ClusterId&, const ClusterId&) = default;
};

enum class GeneralizerKind { identity, uniform_grid, kmeans };

inline std::string_view to_string(GeneralizerKind k) {
    switch (k) {
        case GeneralizerKind::identity: return "identity";
        case GeneralizerKind::uniform_grid: return "uniform_grid";
        case GeneralizerKind::kmeans: return "kmeans";
    }
    return "identity";
}

inline GeneralizerKind generalizer_kind_from_string(std::string_view s) {
    if (s == "identity") return GeneralizerKind::identity;
    if (s == "uniform_grid" || s == "grid") return GeneralizerKind::uniform_grid;
    if (s == "kmeans") return GeneralizerKind::kmeans;
    throw ConfigError("unknown generalizer kind '" + std::string(s) + "'");
}

struct GeneralizerSpec {
    GeneralizerKind kind = GeneralizerKind::identity;
    // uniform_grid
    std::vector<int> bins_per_dim;
    // kmeans
    int k = 64;
    std::size_t warmup_samples = 5000;
    int max_iters = 100;
    double tolerance = 1e-6;

    void validate() const {
        if (kind == GeneralizerKind::uniform_grid) {
            if (bins_per_dim.empty()) throw ConfigError("uniform_grid needs bins_per_dim");
            for (int b : bins_per_dim)
                if (b < 1) throw ConfigError("uniform_grid bins must be >= 1");
        }
        if (kind == GeneralizerKind::kmeans) {
            if (k < 1) throw ConfigError("kmeans k must be >= 1");
            if (!(tolerance > 0.0)) throw ConfigError("kmeans tolerance must be > 0");
            if (max_iters < 1) throw ConfigError("kmeans max_iters must be >= 1");
            if (warmup_samples < static_cast<std::size_t>(k))
                throw ConfigError("kmeans warmup_samples must be >= k");
        }
    }
};

/// Canonical discrete encoding supplied by an environment; backs the identity generalizer.
struct IdentityEncoding {
    std::function<DiscreteStateId(const StateVector&)> encode;
    std::size_t count = 0;
};

/// Axis-aligned uniform binning, row-major (first dimension most significant).
class UniformGrid {
public:
    UniformGrid() = default;
    UniformGrid(std::vector<double> lower, std::vector<double> upper, std::vector<int> bins)
        : lower_(std::move(lower)), upper_(std::move(upper)), bins_(std::move(bins)) {
        if (lower_.size() != upper_.size() || lower_.size() != bins_.size() || bins_.empty())
            throw ConfigError("uniform_grid: bounds and bins must share dimensionality");
        for (std::size_t d = 0; d < bins_.size(); ++d) {
            if (bins_[d] < 1) throw ConfigError("uniform_grid bins must be >= 1");
            if (!(upper_[d] > lower_[d])) throw ConfigError("uniform_grid: upper must exceed lower");
        }
    }

    std::size_t bin(std::size_t dim, double value) const {
        const double width = (upper_[dim] - lower_[dim]) / bins_[dim];
        const double raw = std::floor((value - lower_[dim]) / width);
        const double clamped = std::clamp(raw, 0.0, static_cast<double>(bins_[dim] - 1));
        return static_cast<std::size_t>(clamped);
    }

    std::size_t cell(const StateVector& s) const {
        std::size_t id = 0;
        for (std::size_t d = 0; d < bins_.size(); ++d)
            id = id * static_cast<std::size_t>(bins_[d]) + bin(d, s.at(d));
        return id;
    }

    std::size_t cell_count() const {
        std::size_t n = 1;
        for (int b : bins_) n *= static_cast<std::size_t>(b);
        return n;
    }

    const std::vector<double>& lower() const { return lower_; }
    const std::vector<double>& upper() const { return upper_; }
    const std::vector<int>& bins() const { return bins_; }

private:
    std::vector<double> lower_, upper_;
    std::vector<int> bins_;
};

/// Frozen k-means model. Centroids live in min-max normalized feature space.
class KMeansModel {
public:
    KMeansModel() = default;
    KMeansModel(std::vector<std::vector<double>> centroids, std::vector<double> min,
                std::vector<double> range)
        : centroids_(std::move(centroids)), min_(std::move(min)), range_(std::move(range)) {}

    std::vector<double> normalize(const StateVector& s) const {
        std::vector<double> out(min_.size());
        for (std::size_t d = 0; d < min_.size(); ++d) out[d] = (s.at(d) - min_[d]) / range_[d];
        return out;
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest index.
    std::size_t nearest(const std::vector<double>& normalized) const {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centroids_.size(); ++c) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < normalized.size(); ++d) {
                const double diff = normalized[d] - centroids_[c][d];
                d2 += diff * diff;
            }
            if (d2 < best_d) {
                best_d = d2;
                best = c;
            }
        }
        return best;
    }

    std::size_t assign(const StateVector& s) const { return nearest(normalize(s)); }

    std::size_t k() const { return centroids_.size(); }

    /// Centroids mapped back to raw feature units.
    std::vector<std::vector<double>> raw_centroids() const {
        std::vector<std::vector<double>> out = centroids_;
        for (auto& c : out)
            for (std::size_t d = 0; d < c.size(); ++d) c[d] = c[d] * range_[d] + min_[d];
        return out;
    }

    const std::vector<std::vector<double>>& centroids() const { return centroids_; }
    const std::vector<double>& min() const { return min_; }
    const std::vector<double>& range() const { return range_; }

private:
    std::vector<std::vector<double>> centroids_;
    std::vector<double> min_;
    std::vector<double> range_;
};

namespace detail {

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// k-means++ seeding followed by Lloyd iterations on already-normalized points.
inline std::vector<std::vector<double>> lloyd_kmeans(const std::vector<std::vector<double>>& pts,
                                                     std::size_t k, int max_iters, double tolerance,
                                                     RngStream& rng) {
    std::vector<std::vector<double>> centroids;
    centroids.reserve(k);
    centroids.push_back(pts[rng.below(pts.size())]);

    std::vector<double> d2(pts.size(), std::numeric_limits<double>::infinity());
    while (centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            d2[i] = std::min(d2[i], squared_distance(pts[i], centroids.back()));
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            for (pick = 0; pick + 1 < pts.size(); ++pick) {
                if (d2[pick] > 0.0 && target < d2[pick]) break;
                target -= d2[pick];
            }
            // Float drift can leave us on a zero-weight point at the tail.
            while (d2[pick] == 0.0 && pick > 0) --pick;
        }
        centroids.push_back(pts[pick]);
    }

    std::vector<std::size_t> label(pts.size(), 0);
    const std::size_t dims = pts.front().size();
    for (int iter = 0; iter < max_iters; ++iter) {
        for (std::size_t i = 0; i < pts.size(); ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = squared_distance(pts[i], centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            label[i] = best;
        }
        std::vector<std::vector<double>> sums(k, std::vector<double>(dims, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            ++counts[label[i]];
            for (std::size_t d = 0; d < dims; ++d) sums[label[i]][d] += pts[i][d];
        }
        double max_shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            for (std::size_t d = 0; d < dims; ++d) sums[c][d] /= static_cast<double>(counts[c]);
            max_shift = std::max(max_shift, std::sqrt(squared_distance(sums[c], centroids[c])));
            centroids[c] = std::move(sums[c]);
        }
        if (max_shift < tolerance) break;
    }
    return centroids;
}

}  // namespace detail

/// State-to-cluster mapping. Identity and grid kinds are ready at construction; k-means is
/// usable only after `fit` and is frozen from then on.
class Generalizer {
public:
    Generalizer() = default;

    static Generalizer identity(IdentityEncoding enc) {
        Generalizer g;
        g.kind_ = GeneralizerKind::identity;
        g.identity_ = std::move(enc);
        g.fitted_ = true;
        return g;
    }

    static Generalizer grid(UniformGrid grid) {
        Generalizer g;
        g.kind_ = GeneralizerKind::uniform_grid;
        g.grid_ = std::move(grid);
        g.fitted_ = true;
        return g;
    }

    static Generalizer kmeans(KMeansModel model) {
        Generalizer g;
        g.kind_ = GeneralizerKind::kmeans;
        g.kmeans_ = std::move(model);
        g.fitted_ = true;
        return g;
    }

    GeneralizerKind kind() const { return kind_; }
    bool fitted() const { return fitted_; }

    ClusterId assign(const StateVector& s) const {
        switch (kind_) {
            case GeneralizerKind::identity: return ClusterId{identity_.encode(s)};
            case GeneralizerKind::uniform_grid: return ClusterId{grid_.cell(s)};
            case GeneralizerKind::kmeans: return ClusterId{kmeans_.assign(s)};
        }
        return ClusterId{0};
    }

    std::size_t cluster_count() const {
        switch (kind_) {
            case GeneralizerKind::identity: return identity_.count;
            case GeneralizerKind::uniform_grid: return grid_.cell_count();
            case GeneralizerKind::kmeans: return kmeans_.k();
        }
        return 0;
    }

    const UniformGrid& grid_model() const { return grid_; }
    const KMeansModel& kmeans_model() const { return kmeans_; }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["kind"] = std::string(to_string(kind_));
        switch (kind_) {
            case GeneralizerKind::identity: j["cluster_count"] = identity_.count; break;
            case GeneralizerKind::uniform_grid:
                j["bins_per_dim"] = grid_.bins();
                j["lower"] = grid_.lower();
                j["upper"] = grid_.upper();
                break;
            case GeneralizerKind::kmeans:
                j["k"] = kmeans_.k();
                j["centroids"] = kmeans_.centroids();
                j["min"] = kmeans_.min();
                j["range"] = kmeans_.range();
                break;
        }
        return j;
    }

    /// Identity models are bound back to the environment's encoding on load.
    static Generalizer from_json(const nlohmann::json& j, const IdentityEncoding& identity_enc) {
        const auto kind = generalizer_kind_from_string(j.at("kind").get<std::string>());
        switch (kind) {
            case GeneralizerKind::identity: return identity(identity_enc);
            case GeneralizerKind::uniform_grid:
                return grid(UniformGrid(j.at("lower").get<std::vector<double>>(),
                                        j.at("upper").get<std::vector<double>>(),
                                        j.at("bins_per_dim").get<std::vector<int>>()));
            case GeneralizerKind::kmeans:
                return kmeans(KMeansModel(j.at("centroids").get<std::vector<std::vector<double>>>(),
                                          j.at("min").get<std::vector<double>>(),
                                          j.at("range").get<std::vector<double>>()));
        }
        throw ConfigError("unreachable generalizer kind");
    }

private:
    GeneralizerKind kind_ = GeneralizerKind::identity;
    bool fitted_ = false;
    IdentityEncoding identity_;
    UniformGrid grid_;
    KMeansModel kmeans_;
};

/// Builds a generalizer. Identity and grid ignore the samples; k-means normalizes the samples
/// to [0,1] per dimension, seeds k-means++ style and runs Lloyd iterations.
inline Generalizer fit(const GeneralizerSpec& spec, std::span<const StateVector> samples,
                       RngStream& rng, const IdentityEncoding& identity_enc = {},
                       const FeatureBounds& bounds = {}) {
    spec.validate();
    switch (spec.kind) {
        case GeneralizerKind::identity:
            if (!identity_enc.encode) throw ConfigError("identity generalizer needs an encoding");
            return Generalizer::identity(identity_enc);
        case GeneralizerKind::uniform_grid:
            return Generalizer::grid(UniformGrid(bounds.lower, bounds.upper, spec.bins_per_dim));
        case GeneralizerKind::kmeans: break;
    }

    if (samples.empty()) throw Fault("kmeans fit: no samples");
    const std::size_t dims = samples.front().size();
    for (const auto& s : samples)
        if (s.size() != dims) throw Fault("kmeans fit: samples differ in dimensionality");

    std::set<StateVector> distinct(samples.begin(), samples.end());
    if (distinct.size() < static_cast<std::size_t>(spec.k))
        throw Fault("kmeans fit: " + std::to_string(distinct.size()) +
                    " distinct samples for k=" + std::to_string(spec.k));

    std::vector<double> lo(dims, std::numeric_limits<double>::infinity());
    std::vector<double> hi(dims, -std::numeric_limits<double>::infinity());
    for (const auto& s : samples)
        for (std::size_t d = 0; d < dims; ++d) {
            lo[d] = std::min(lo[d], s[d]);
            hi[d] = std::max(hi[d], s[d]);
        }
    std::vector<double> range(dims);
    for (std::size_t d = 0; d < dims; ++d) range[d] = hi[d] > lo[d] ? hi[d] - lo[d] : 1.0;

    std::vector<std::vector<double>> pts;
    pts.reserve(samples.size());
    for (const auto& s : samples) {
        std::vector<double> p(dims);
        for (std::size_t d = 0; d < dims; ++d) p[d] = (s[d] - lo[d]) / range[d];
        pts.push_back(std::move(p));
    }

    auto centroids = detail::lloyd_kmeans(pts, static_cast<std::size_t>(spec.k), spec.max_iters,
                                          spec.tolerance, rng);
    return Generalizer::kmeans(KMeansModel(std::move(centroids), std::move(lo), std::move(range)));
}

}  // namespace bpa

template <>
struct std::hash<bpa::ClusterId> {
    std::size_t operator()(const bpa::ClusterId& c) const noexcept {
        return std::hash<std::size_t>{}(c.value);
    }
};
