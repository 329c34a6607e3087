#include "hypood/encoder.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "hypood/datagen.hpp"
#include "hypood/errors.hpp"

#include "json.hpp"

namespace hypood {

std::vector<int> MlpSpec::layer_dims() const {
    std::vector<int> dims = hidden_dims;
    dims.push_back(penultimate_dim);
    for (int h : proj_hidden_dims) dims.push_back(h);
    dims.push_back(proj_dim);
    return dims;
}

void MlpSpec::validate() const {
    if (input_dim < 1) throw InvalidParam("MlpSpec: input_dim must be >= 1");
    if (penultimate_dim < 1) throw InvalidParam("MlpSpec: penultimate_dim must be >= 1");
    if (proj_dim < 2) throw InvalidParam("MlpSpec: proj_dim must be >= 2");
    for (int h : hidden_dims)
        if (h < 1) throw InvalidParam("MlpSpec: hidden dims must be >= 1");
    for (int h : proj_hidden_dims)
        if (h < 1) throw InvalidParam("MlpSpec: projection hidden dims must be >= 1");
    if (proj_hidden_dims.size() > 1)
        throw InvalidParam("MlpSpec: at most one projection hidden layer");
    if (activation != "relu") throw InvalidParam("MlpSpec: unsupported activation " + activation);
}

Weights init_weights(const MlpSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    Weights w;
    int in_dim = spec.input_dim;
    for (int out_dim : spec.layer_dims()) {
        Layer layer;
        layer.w = Mat(static_cast<size_t>(out_dim), static_cast<size_t>(in_dim));
        layer.b = Vec(static_cast<size_t>(out_dim), 0.0);
        const double std = std::sqrt(2.0 / static_cast<double>(in_dim));
        for (auto& x : layer.w.data) x = rng.normal(0.0, std);
        w.layers.push_back(std::move(layer));
        in_dim = out_dim;
    }
    return w;
}

WeightGrads zero_grads(const MlpSpec& spec) {
    WeightGrads g;
    int in_dim = spec.input_dim;
    for (int out_dim : spec.layer_dims()) {
        Layer layer;
        layer.w = Mat(static_cast<size_t>(out_dim), static_cast<size_t>(in_dim));
        layer.b = Vec(static_cast<size_t>(out_dim), 0.0);
        g.layers.push_back(std::move(layer));
        in_dim = out_dim;
    }
    return g;
}

namespace {

Vec affine(const Layer& layer, std::span<const double> in) {
    if (in.size() != layer.w.cols) throw DimMismatch("forward: layer input dim mismatch");
    Vec out(layer.w.rows);
    for (size_t r = 0; r < layer.w.rows; ++r) {
        double s = layer.b[r];
        const double* wr = layer.w.data.data() + r * layer.w.cols;
        for (size_t c = 0; c < layer.w.cols; ++c) s += wr[c] * in[c];
        out[r] = s;
    }
    return out;
}

}  // namespace

ForwardResult forward(const Weights& weights, const MlpSpec& spec, std::span<const double> x) {
    if (x.size() != static_cast<size_t>(spec.input_dim))
        throw DimMismatch("forward: input dim " + std::to_string(x.size()) + " != spec " +
                          std::to_string(spec.input_dim));
    if (weights.layers.size() != spec.layer_count())
        throw DimMismatch("forward: weights/spec layer count mismatch");
    if (!all_finite(x)) throw NonFinite("forward: non-finite input");

    ForwardCache cache;
    cache.input.assign(x.begin(), x.end());
    cache.weights_version = weights.version;
    const size_t L = spec.layer_count();
    cache.pre.resize(L);
    cache.post.resize(L);

    Vec cur(x.begin(), x.end());
    for (size_t l = 0; l < L; ++l) {
        cache.pre[l] = affine(weights.layers[l], cur);
        const bool has_relu = l + 1 < L;  // final projection layer is linear
        if (has_relu) {
            cache.post[l] = cache.pre[l];
            for (auto& v : cache.post[l]) v = v > 0.0 ? v : 0.0;
        } else {
            cache.post[l] = cache.pre[l];
        }
        cur = cache.post[l];
    }

    cache.z_tilde = cache.post.back();
    cache.z_tilde_norm = norm(cache.z_tilde);
    if (!(cache.z_tilde_norm > kEpsNorm))
        throw ZeroVector("forward: pre-normalization embedding vanished (dead network)");
    cache.z = Vec(cache.z_tilde.size());
    const double inv = 1.0 / cache.z_tilde_norm;
    for (size_t i = 0; i < cache.z.size(); ++i) cache.z[i] = cache.z_tilde[i] * inv;

    ForwardResult res;
    res.penultimate = cache.post[spec.encoder_layer_count() - 1];
    res.z = cache.z;
    res.cache = std::move(cache);
    return res;
}

BackwardResult backward(const Weights& weights, const MlpSpec& spec, const ForwardCache& cache,
                        std::span<const double> dL_dz, std::span<const double> dL_dpenultimate) {
    if (cache.weights_version != weights.version)
        throw StaleCache("backward: cache was built against different weights");
    const size_t L = spec.layer_count();
    const size_t enc_layers = spec.encoder_layer_count();

    BackwardResult res;
    res.grads = zero_grads(spec);

    // dL/dz_tilde through the normalization Jacobian.
    Vec g_out;
    if (!dL_dz.empty()) {
        g_out = l2_normalize_backward(cache.z, cache.z_tilde_norm, dL_dz);
    } else {
        g_out.assign(cache.z.size(), 0.0);
    }

    for (size_t l = L; l-- > 0;) {
        const bool has_relu = l + 1 < L;
        Vec g_pre = std::move(g_out);
        if (has_relu) {
            for (size_t i = 0; i < g_pre.size(); ++i)
                if (!(cache.pre[l][i] > 0.0)) g_pre[i] = 0.0;
        }
        const Vec& in = l == 0 ? cache.input : cache.post[l - 1];
        Layer& g = res.grads.layers[l];
        for (size_t r = 0; r < g.w.rows; ++r) {
            const double gr = g_pre[r];
            g.b[r] += gr;
            double* row = g.w.data.data() + r * g.w.cols;
            for (size_t c = 0; c < g.w.cols; ++c) row[c] += gr * in[c];
        }
        const Mat& w = weights.layers[l].w;
        g_out.assign(w.cols, 0.0);
        for (size_t r = 0; r < w.rows; ++r) {
            const double gr = g_pre[r];
            if (gr == 0.0) continue;
            const double* row = w.data.data() + r * w.cols;
            for (size_t c = 0; c < w.cols; ++c) g_out[c] += gr * row[c];
        }
        // Inject the penultimate-feature gradient where the projection head
        // hands back to the encoder.
        if (l == enc_layers && !dL_dpenultimate.empty()) {
            if (dL_dpenultimate.size() != g_out.size())
                throw DimMismatch("backward: penultimate grad dim mismatch");
            for (size_t i = 0; i < g_out.size(); ++i) g_out[i] += dL_dpenultimate[i];
        }
    }
    // Degenerate one-layer-projection case: enc boundary == input of layer
    // enc_layers; the loop above handled every l in [0, L).
    res.input_grad = std::move(g_out);
    return res;
}

void accumulate(WeightGrads& into, const WeightGrads& delta) {
    if (into.layers.size() != delta.layers.size())
        throw DimMismatch("accumulate: layer count mismatch");
    for (size_t l = 0; l < into.layers.size(); ++l) {
        auto& a = into.layers[l];
        const auto& d = delta.layers[l];
        for (size_t i = 0; i < a.w.data.size(); ++i) a.w.data[i] += d.w.data[i];
        for (size_t i = 0; i < a.b.size(); ++i) a.b[i] += d.b[i];
    }
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr int kFormatVersion = 1;

void emit_vec(std::ostream& out, const Vec& v) {
    out << '[';
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out << ',';
        out << format_double17(v[i]);
    }
    out << ']';
}

void emit_mat(std::ostream& out, const Mat& m) {
    out << '[';
    for (size_t r = 0; r < m.rows; ++r) {
        if (r) out << ',';
        out << '[';
        for (size_t c = 0; c < m.cols; ++c) {
            if (c) out << ',';
            out << format_double17(m.at(r, c));
        }
        out << ']';
    }
    out << ']';
}

void emit_int_vec(std::ostream& out, const std::vector<int>& v) {
    out << '[';
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out << ',';
        out << v[i];
    }
    out << ']';
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ostringstream out;
    out << "{\n";
    out << "  \"format_version\": " << kFormatVersion << ",\n";
    const auto& s = ckpt.spec;
    out << "  \"spec\": {\"input_dim\": " << s.input_dim << ", \"hidden_dims\": ";
    emit_int_vec(out, s.hidden_dims);
    out << ", \"penultimate_dim\": " << s.penultimate_dim << ", \"proj_hidden_dims\": ";
    emit_int_vec(out, s.proj_hidden_dims);
    out << ", \"proj_dim\": " << s.proj_dim << ", \"activation\": \"" << s.activation << "\"},\n";
    out << "  \"weights\": [\n";
    for (size_t l = 0; l < ckpt.weights.layers.size(); ++l) {
        const auto& layer = ckpt.weights.layers[l];
        out << "    {\"w\": ";
        emit_mat(out, layer.w);
        out << ", \"b\": ";
        emit_vec(out, layer.b);
        out << '}' << (l + 1 < ckpt.weights.layers.size() ? "," : "") << '\n';
    }
    out << "  ]";
    if (ckpt.prototypes) {
        out << ",\n  \"prototypes\": {\"alpha\": " << format_double17(ckpt.prototypes->alpha)
            << ", \"mu\": ";
        emit_mat(out, ckpt.prototypes->mu);
        out << ", \"update_count\": [";
        for (size_t i = 0; i < ckpt.prototypes->update_count.size(); ++i) {
            if (i) out << ',';
            out << ckpt.prototypes->update_count[i];
        }
        out << "]}";
    }
    out << "\n}\n";

    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open for writing: " + path);
    file << out.str();
    if (!file) throw IoError("write failed: " + path);
}

namespace {

using nlohmann::json;

Vec json_to_vec(const json& j) {
    Vec v;
    v.reserve(j.size());
    for (const auto& x : j) v.push_back(x.get<double>());
    return v;
}

Mat json_to_mat(const json& j) {
    Mat m;
    m.rows = j.size();
    m.cols = m.rows ? j[0].size() : 0;
    m.data.reserve(m.rows * m.cols);
    for (const auto& row : j) {
        if (row.size() != m.cols) throw SchemaError("checkpoint: ragged matrix rows");
        for (const auto& x : row) m.data.push_back(x.get<double>());
    }
    return m;
}

}  // namespace

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open: " + path);
    json j;
    try {
        file >> j;
    } catch (const json::exception& e) {
        throw ParseError("checkpoint " + path + ": " + e.what());
    }

    try {
        if (!j.contains("format_version") || !j["format_version"].is_number_integer())
            throw VersionError("checkpoint " + path + ": missing format_version");
        const int version = j["format_version"].get<int>();
        if (version != kFormatVersion)
            throw VersionError("checkpoint " + path + ": unknown format_version " +
                               std::to_string(version));

        Checkpoint ckpt;
        const auto& js = j.at("spec");
        ckpt.spec.input_dim = js.at("input_dim").get<int>();
        ckpt.spec.hidden_dims = js.at("hidden_dims").get<std::vector<int>>();
        ckpt.spec.penultimate_dim = js.at("penultimate_dim").get<int>();
        ckpt.spec.proj_hidden_dims = js.at("proj_hidden_dims").get<std::vector<int>>();
        ckpt.spec.proj_dim = js.at("proj_dim").get<int>();
        ckpt.spec.activation = js.at("activation").get<std::string>();
        ckpt.spec.validate();

        const auto dims = ckpt.spec.layer_dims();
        const auto& jw = j.at("weights");
        if (jw.size() != dims.size())
            throw SchemaError("checkpoint " + path + ": expected " + std::to_string(dims.size()) +
                              " layers, found " + std::to_string(jw.size()));
        size_t in_dim = static_cast<size_t>(ckpt.spec.input_dim);
        for (size_t l = 0; l < jw.size(); ++l) {
            Layer layer;
            layer.w = json_to_mat(jw[l].at("w"));
            layer.b = json_to_vec(jw[l].at("b"));
            const size_t out_dim = static_cast<size_t>(dims[l]);
            if (layer.w.rows != out_dim || layer.w.cols != in_dim || layer.b.size() != out_dim)
                throw SchemaError("checkpoint " + path + ": layer " + std::to_string(l) +
                                  " shape mismatch");
            if (!all_finite(layer.w.data) || !all_finite(layer.b))
                throw NonFinite("checkpoint " + path + ": non-finite weights");
            ckpt.weights.layers.push_back(std::move(layer));
            in_dim = out_dim;
        }

        if (j.contains("prototypes")) {
            const auto& jp = j["prototypes"];
            PrototypeBank bank;
            bank.alpha = jp.at("alpha").get<double>();
            bank.mu = json_to_mat(jp.at("mu"));
            bank.update_count = jp.at("update_count").get<std::vector<long>>();
            if (bank.mu.cols != static_cast<size_t>(ckpt.spec.proj_dim) ||
                bank.update_count.size() != bank.mu.rows)
                throw SchemaError("checkpoint " + path + ": prototype shape mismatch");
            ckpt.prototypes = std::move(bank);
        }
        return ckpt;
    } catch (const json::exception& e) {
        throw SchemaError("checkpoint " + path + ": " + e.what());
    }
}

Checkpoint load_checkpoint(const std::string& path, const MlpSpec& expected_spec) {
    Checkpoint ckpt = load_checkpoint(path);
    if (!(ckpt.spec == expected_spec))
        throw SchemaError("checkpoint " + path + ": stored spec does not match the expected spec");
    return ckpt;
}

// ---- gradient checking -----------------------------------------------------

GradCheckReport grad_check(const Weights& weights, const LossWithGrad& fn, double step,
                           size_t max_coords, uint64_t seed) {
    if (!(step > 0.0)) throw InvalidParam("grad_check: step must be > 0");

    WeightGrads analytic;
    fn(weights, &analytic);

    struct Coord {
        size_t layer;
        size_t flat;  // w.data index, or w.size + b index
    };
    std::vector<Coord> coords;
    for (size_t l = 0; l < weights.layers.size(); ++l) {
        const size_t nw = weights.layers[l].w.data.size();
        const size_t nb = weights.layers[l].b.size();
        for (size_t i = 0; i < nw + nb; ++i) coords.push_back({l, i});
    }
    if (coords.size() > max_coords) {
        Rng rng(seed);
        rng.shuffle(coords);
        coords.resize(max_coords);
    }

    GradCheckReport report;
    Weights probe = weights;
    for (const auto& c : coords) {
        auto& layer = probe.layers[c.layer];
        const size_t nw = layer.w.data.size();
        double* slot = c.flat < nw ? &layer.w.data[c.flat] : &layer.b[c.flat - nw];
        const double orig = *slot;

        *slot = orig + step;
        const double up = fn(probe, nullptr);
        *slot = orig - step;
        const double down = fn(probe, nullptr);
        *slot = orig;

        const double fd = (up - down) / (2.0 * step);
        const auto& alayer = analytic.layers[c.layer];
        const double a = c.flat < nw ? alayer.w.data[c.flat] : alayer.b[c.flat - nw];
        const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
        ++report.coords_checked;
        if (rel > report.worst_rel_error) {
            report.worst_rel_error = rel;
            report.worst_layer = c.layer;
            report.worst_index = c.flat;
        }
    }
    return report;
}

}  // namespace hypood
