#include "kfp/mlp.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "kfp/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace kfp {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::LeakyRelu: return "leaky_relu";
        case Activation::None: return "none";
    }
    return "tanh";
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "leaky_relu") return Activation::LeakyRelu;
    if (s == "none") return Activation::None;
    throw std::invalid_argument("unknown activation: " + s);
}

FeatureMap FeatureMap::identity(int dim_x, int dim_v) {
    FeatureMap fm;
    fm.kind = Kind::Identity;
    fm.dim_x = dim_x;
    fm.dim_v = dim_v;
    return fm;
}

FeatureMap FeatureMap::periodic_embed(double omega, int dim_x, int dim_v) {
    FeatureMap fm;
    fm.kind = Kind::PeriodicEmbed;
    fm.omega = omega;
    fm.dim_x = dim_x;
    fm.dim_v = dim_v;
    return fm;
}

void FeatureMap::apply(const double* x, const double* v, double* out) const {
    if (kind == Kind::Identity) {
        for (int i = 0; i < dim_x; ++i) out[i] = x[i];
        for (int i = 0; i < dim_v; ++i) out[dim_x + i] = v[i];
    } else {
        for (int i = 0; i < dim_x; ++i) {
            out[2 * i] = std::sin(omega * x[i]);
            out[2 * i + 1] = std::cos(omega * x[i]);
        }
        for (int i = 0; i < dim_v; ++i) out[2 * dim_x + i] = v[i];
    }
}

void FeatureMap::tangent(const double* x, const double* dx, const double* dv,
                         double* dout) const {
    const int off = velocity_offset();
    if (kind == Kind::Identity) {
        for (int i = 0; i < dim_x; ++i) dout[i] = dx ? dx[i] : 0.0;
    } else {
        for (int i = 0; i < dim_x; ++i) {
            const double t = dx ? dx[i] : 0.0;
            dout[2 * i] = omega * std::cos(omega * x[i]) * t;
            dout[2 * i + 1] = -omega * std::sin(omega * x[i]) * t;
        }
    }
    for (int i = 0; i < dim_v; ++i) dout[off + i] = dv ? dv[i] : 0.0;
}

MlpArchitecture MlpArchitecture::affine(int in_dim, int out_dim) {
    MlpArchitecture a;
    a.widths = {in_dim, out_dim};
    a.activation = Activation::None;
    return a;
}

MlpArchitecture MlpArchitecture::mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
                                     Activation act, double leaky_alpha) {
    MlpArchitecture a;
    a.widths.push_back(in_dim);
    for (int h : hidden) a.widths.push_back(h);
    a.widths.push_back(out_dim);
    a.activation = act;
    a.leaky_alpha = leaky_alpha;
    return a;
}

std::size_t MlpArchitecture::param_count() const {
    std::size_t n = 0;
    for (int k = 0; k < n_layers(); ++k)
        n += static_cast<std::size_t>(widths[k + 1]) * (widths[k] + 1);
    return n;
}

std::size_t MlpArchitecture::weight_offset(int k) const {
    std::size_t off = 0;
    for (int l = 0; l < k; ++l)
        off += static_cast<std::size_t>(widths[l + 1]) * (widths[l] + 1);
    return off;
}

std::size_t MlpArchitecture::bias_offset(int k) const {
    return weight_offset(k) + static_cast<std::size_t>(widths[k + 1]) * widths[k];
}

void MlpArchitecture::validate(int feature_dim, int out_dim) const {
    if (n_layers() < 1)
        throw std::invalid_argument("MlpArchitecture: needs at least one layer");
    for (int w : widths)
        if (w < 1) throw std::invalid_argument("MlpArchitecture: widths must be positive");
    if (widths.front() != feature_dim)
        throw std::invalid_argument("MlpArchitecture: input width does not match feature map");
    if (widths.back() != out_dim)
        throw std::invalid_argument("MlpArchitecture: output width mismatch");
    if (activation == Activation::None && n_layers() != 1)
        throw std::invalid_argument("MlpArchitecture: affine variant must have a single layer");
}

MlpParams init_params(const MlpArchitecture& arch, std::uint64_t seed) {
    MlpParams p;
    p.values.assign(arch.param_count(), 0.0);
    CounterRng rng(seed);
    std::uint64_t idx = 0;
    for (int k = 0; k < arch.n_layers(); ++k) {
        const int fan_in = arch.widths[k];
        const double bound = std::sqrt(1.0 / fan_in);
        double* w = p.values.data() + arch.weight_offset(k);
        const std::size_t nw = static_cast<std::size_t>(arch.widths[k + 1]) * fan_in;
        for (std::size_t i = 0; i < nw; ++i, ++idx)
            w[i] = bound * (2.0 * rng.uniform(rng_stream::init, idx, 0) - 1.0);
        // biases stay zero
    }
    return p;
}

void save_params(std::ostream& os, const MlpArchitecture& arch, const FeatureMap& fm,
                 const MlpParams& params) {
    os << "kfp-params 1\n";
    os << "widths";
    for (int w : arch.widths) os << ' ' << w;
    os << "\nactivation " << to_string(arch.activation) << " alpha ";
    os.precision(17);
    os << arch.leaky_alpha << "\nfeature_map "
       << (fm.kind == FeatureMap::Kind::Identity ? "identity" : "periodic_embed")
       << " omega " << fm.omega << "\ndims " << fm.dim_x << ' ' << fm.dim_v << '\n'
       << params.values.size() << '\n';
    for (double v : params.values) os << v << '\n';
}

void load_params(std::istream& is, MlpArchitecture& arch, FeatureMap& fm, MlpParams& params) {
    std::string tag;
    int version = 0;
    is >> tag >> version;
    if (tag != "kfp-params" || version != 1)
        throw std::runtime_error("load_params: unrecognized header");
    is >> tag;  // "widths"
    arch.widths.clear();
    // widths run until the "activation" keyword
    while (is >> tag && tag != "activation") arch.widths.push_back(std::stoi(tag));
    std::string act;
    is >> act >> tag >> arch.leaky_alpha;
    arch.activation = activation_from_string(act);
    std::string fm_kind;
    is >> tag >> fm_kind >> tag >> fm.omega;
    fm.kind = fm_kind == "identity" ? FeatureMap::Kind::Identity
                                    : FeatureMap::Kind::PeriodicEmbed;
    is >> tag >> fm.dim_x >> fm.dim_v;
    std::size_t n = 0;
    is >> n;
    params.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) is >> params.values[i];
    if (!is) throw std::runtime_error("load_params: truncated stream");
    if (n != arch.param_count())
        throw std::runtime_error("load_params: value count does not match shape header");
}

namespace {

inline double act_value(Activation a, double alpha, double z) {
    switch (a) {
        case Activation::Tanh: return std::tanh(z);
        case Activation::LeakyRelu: return z > 0.0 ? z : alpha * z;
        case Activation::None: return z;
    }
    return z;
}

// First/second derivative from the post-activation value.
inline double act_deriv(Activation a, double alpha, double h) {
    switch (a) {
        case Activation::Tanh: return 1.0 - h * h;
        case Activation::LeakyRelu: return h > 0.0 ? 1.0 : alpha;
        case Activation::None: return 1.0;
    }
    return 1.0;
}

inline double act_second(Activation a, double h) {
    if (a == Activation::Tanh) return -2.0 * h * (1.0 - h * h);
    return 0.0;
}

// y[j] = b[j] + sum_i W[j,i] x[i]
inline void affine_apply(const double* W, const double* b, const double* x,
                         int rows, int cols, double* y) {
    for (int j = 0; j < rows; ++j) {
        double s = b ? b[j] : 0.0;
        const double* wr = W + static_cast<std::size_t>(j) * cols;
        for (int i = 0; i < cols; ++i) s += wr[i] * x[i];
        y[j] = s;
    }
}

// y[i] = sum_j W[j,i] g[j]
inline void affine_transpose_apply(const double* W, const double* g,
                                   int rows, int cols, double* y) {
    for (int i = 0; i < cols; ++i) y[i] = 0.0;
    for (int j = 0; j < rows; ++j) {
        const double gj = g[j];
        if (gj == 0.0) continue;
        const double* wr = W + static_cast<std::size_t>(j) * cols;
        for (int i = 0; i < cols; ++i) y[i] += wr[i] * gj;
    }
}

struct PointScratch {
    std::vector<std::vector<double>> h;  // post-activation per layer, 0..L
    explicit PointScratch(const MlpArchitecture& arch) {
        h.resize(arch.widths.size());
        for (std::size_t k = 0; k < arch.widths.size(); ++k)
            h[k].resize(arch.widths[k]);
    }
};

void forward_point(const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                   const double* x, const double* v, PointScratch& s) {
    fm.apply(x, v, s.h[0].data());
    const int L = arch.n_layers();
    for (int k = 0; k < L; ++k) {
        const double* W = params.values.data() + arch.weight_offset(k);
        const double* b = params.values.data() + arch.bias_offset(k);
        affine_apply(W, b, s.h[k].data(), arch.widths[k + 1], arch.widths[k],
                     s.h[k + 1].data());
        if (k + 1 < L)
            for (double& z : s.h[k + 1]) z = act_value(arch.activation, arch.leaky_alpha, z);
    }
}

// Backward pass (inputs only): cotangent g on the output, returns the
// feature-level cotangent in g0.
void backward_inputs(const MlpArchitecture& arch, const MlpParams& params,
                     const PointScratch& s, const double* g_out, double* g0) {
    const int L = arch.n_layers();
    std::vector<double> g(g_out, g_out + arch.widths[L]);
    std::vector<double> gn;
    for (int k = L - 1; k >= 0; --k) {
        const double* W = params.values.data() + arch.weight_offset(k);
        gn.assign(arch.widths[k], 0.0);
        affine_transpose_apply(W, g.data(), arch.widths[k + 1], arch.widths[k], gn.data());
        if (k > 0)
            for (int i = 0; i < arch.widths[k]; ++i)
                gn[i] *= act_deriv(arch.activation, arch.leaky_alpha, s.h[k][i]);
        g.swap(gn);
    }
    std::memcpy(g0, g.data(), sizeof(double) * arch.widths[0]);
}

}  // namespace

void mlp_forward(const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                 const double* x, const double* v, double* u_out) {
    if (params.values.size() != arch.param_count())
        throw std::invalid_argument("mlp_forward: parameter count mismatch");
    PointScratch s(arch);
    forward_point(arch, fm, params, x, v, s);
    std::memcpy(u_out, s.h.back().data(), sizeof(double) * arch.output_dim());
}

double divergence_v(const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                    const double* x, const double* v) {
    if (arch.output_dim() != fm.dim_v)
        throw std::invalid_argument("divergence_v: output dim must equal dim_v");
    PointScratch s(arch);
    forward_point(arch, fm, params, x, v, s);
    const int out = arch.output_dim();
    const int off = fm.velocity_offset();
    std::vector<double> e(out, 0.0), g0(arch.widths[0]);
    double div = 0.0;
    for (int i = 0; i < out; ++i) {
        e.assign(out, 0.0);
        e[i] = 1.0;
        backward_inputs(arch, params, s, e.data(), g0.data());
        div += g0[off + i];  // velocities pass through the feature map unchanged
    }
    return div;
}

void accumulate_param_vjp(const MlpArchitecture& arch, const FeatureMap& fm,
                          const MlpParams& params, const double* x, const double* v,
                          const double* u_bar, double* grad) {
    PointScratch s(arch);
    forward_point(arch, fm, params, x, v, s);
    const int L = arch.n_layers();
    std::vector<double> g(u_bar, u_bar + arch.widths[L]);
    std::vector<double> gn;
    for (int k = L - 1; k >= 0; --k) {
        double* Wg = grad + arch.weight_offset(k);
        double* bg = grad + arch.bias_offset(k);
        const int rows = arch.widths[k + 1], cols = arch.widths[k];
        for (int j = 0; j < rows; ++j) {
            const double gj = g[j];
            bg[j] += gj;
            double* wr = Wg + static_cast<std::size_t>(j) * cols;
            const double* hk = s.h[k].data();
            for (int i = 0; i < cols; ++i) wr[i] += gj * hk[i];
        }
        if (k > 0) {
            const double* W = params.values.data() + arch.weight_offset(k);
            gn.assign(cols, 0.0);
            affine_transpose_apply(W, g.data(), rows, cols, gn.data());
            for (int i = 0; i < cols; ++i)
                gn[i] *= act_deriv(arch.activation, arch.leaky_alpha, s.h[k][i]);
            g.swap(gn);
        }
    }
}

void input_jacobian(const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                    const double* x, const double* v, double* jac) {
    PointScratch s(arch);
    forward_point(arch, fm, params, x, v, s);
    const int out = arch.output_dim();
    const int d_in = fm.dim_x + fm.dim_v;
    const int L = arch.n_layers();
    // One JVP per input coordinate.
    std::vector<double> din(d_in), dfeat(arch.widths[0]);
    std::vector<double> t(arch.widths[0]), tn;
    for (int c = 0; c < d_in; ++c) {
        din.assign(d_in, 0.0);
        din[c] = 1.0;
        fm.tangent(x, din.data(), din.data() + fm.dim_x, dfeat.data());
        t.assign(dfeat.begin(), dfeat.end());
        for (int k = 0; k < L; ++k) {
            const double* W = params.values.data() + arch.weight_offset(k);
            tn.assign(arch.widths[k + 1], 0.0);
            affine_apply(W, nullptr, t.data(), arch.widths[k + 1], arch.widths[k], tn.data());
            if (k + 1 < L)
                for (int i = 0; i < arch.widths[k + 1]; ++i)
                    tn[i] *= act_deriv(arch.activation, arch.leaky_alpha, s.h[k + 1][i]);
            t.swap(tn);
        }
        for (int j = 0; j < out; ++j) jac[static_cast<std::size_t>(j) * d_in + c] = t[j];
    }
}


// ---------------------------------------------------------------------------
// Batched kernel
// ---------------------------------------------------------------------------

namespace {

// Per-thread scratch for one particle block. Row-major [row * width + unit].
// Activation derivatives are tabulated once per block so the tangent and
// reverse sweeps stay free of transcendental calls and branches.
struct BlockScratch {
    int n_layers;
    int dim_v;
    std::vector<std::vector<double>> h;      // post-activation, layers 0..L
    std::vector<std::vector<double>> d1;     // sigma' at hidden layers (index 1..L-1)
    std::vector<std::vector<double>> d2;     // sigma'' at hidden layers
    std::vector<std::vector<double>> adot;   // tangents per seed: [seed][layer]
    std::vector<std::vector<double>> hdot;
    std::vector<std::vector<double>> spre;   // pre-activation adjoints from tangent paths
    std::vector<double> div, loss_term, u_bar, div_bar;
    std::vector<double> A, P;                // reverse-sweep buffers
    std::vector<std::vector<double>> wt;     // column-major weights per layer

    BlockScratch(const MlpArchitecture& arch, int block, int dv) : n_layers(arch.n_layers()), dim_v(dv) {
        const int L = n_layers;
        h.resize(L + 1);
        d1.resize(L);
        d2.resize(L);
        spre.resize(L);
        int wmax = 0;
        for (int k = 0; k <= L; ++k) {
            h[k].resize(static_cast<std::size_t>(block) * arch.widths[k]);
            wmax = std::max(wmax, arch.widths[k]);
        }
        for (int k = 1; k < L; ++k) {
            d1[k].resize(static_cast<std::size_t>(block) * arch.widths[k]);
            d2[k].resize(static_cast<std::size_t>(block) * arch.widths[k]);
            spre[k].resize(static_cast<std::size_t>(block) * arch.widths[k]);
        }
        adot.resize(static_cast<std::size_t>(dv) * (L + 1));
        hdot.resize(static_cast<std::size_t>(dv) * (L + 1));
        for (int s = 0; s < dv; ++s)
            for (int k = 0; k <= L; ++k) {
                adot[s * (L + 1) + k].resize(static_cast<std::size_t>(block) * arch.widths[k]);
                hdot[s * (L + 1) + k].resize(static_cast<std::size_t>(block) * arch.widths[k]);
            }
        div.resize(block);
        loss_term.resize(block);
        u_bar.resize(static_cast<std::size_t>(block) * dv);
        div_bar.resize(block);
        A.resize(static_cast<std::size_t>(block) * wmax);
        P.resize(static_cast<std::size_t>(block) * wmax);
        wt.resize(L);
        for (int k = 0; k < L; ++k)
            wt[k].resize(static_cast<std::size_t>(arch.widths[k + 1]) * arch.widths[k]);
    }

    void load_transposed_weights(const MlpArchitecture& arch, const MlpParams& params) {
        for (int k = 0; k < n_layers; ++k) {
            const int rows = arch.widths[k + 1], cols = arch.widths[k];
            const double* W = params.values.data() + arch.weight_offset(k);
            for (int j = 0; j < rows; ++j)
                for (int i = 0; i < cols; ++i)
                    wt[k][static_cast<std::size_t>(i) * rows + j] =
                        W[static_cast<std::size_t>(j) * cols + i];
        }
    }
};

// out[p][j] = b[j] + sum_i Wt[i][j] in[p][i]  (saxpy over contiguous rows)
void batch_affine(const double* wt, const double* b, const double* in, int nb, int rows,
                  int cols, double* out) {
    for (int p = 0; p < nb; ++p) {
        const double* ip = in + static_cast<std::size_t>(p) * cols;
        double* op = out + static_cast<std::size_t>(p) * rows;
        if (b)
            std::memcpy(op, b, sizeof(double) * rows);
        else
            std::memset(op, 0, sizeof(double) * rows);
        for (int i = 0; i < cols; ++i) {
            const double xi = ip[i];
            const double* wr = wt + static_cast<std::size_t>(i) * rows;
            for (int j = 0; j < rows; ++j) op[j] += xi * wr[j];
        }
    }
}

// Primal forward over a block; tabulates sigma' and sigma''.
void block_forward(const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                   const double* xs, const double* vs, int nb, BlockScratch& ws) {
    const int L = arch.n_layers();
    const int m0 = arch.widths[0];
    for (int p = 0; p < nb; ++p)
        fm.apply(xs + static_cast<std::size_t>(p) * fm.dim_x,
                 vs + static_cast<std::size_t>(p) * fm.dim_v, ws.h[0].data() + p * m0);
    for (int k = 0; k < L; ++k) {
        const double* b = params.values.data() + arch.bias_offset(k);
        const int rows = arch.widths[k + 1], cols = arch.widths[k];
        batch_affine(ws.wt[k].data(), b, ws.h[k].data(), nb, rows, cols, ws.h[k + 1].data());
        if (k + 1 < L) {
            double* hk = ws.h[k + 1].data();
            double* d1 = ws.d1[k + 1].data();
            double* d2 = ws.d2[k + 1].data();
            const std::size_t total = static_cast<std::size_t>(nb) * rows;
            switch (arch.activation) {
                case Activation::Tanh:
                    for (std::size_t i = 0; i < total; ++i) {
                        const double t = std::tanh(hk[i]);
                        hk[i] = t;
                        d1[i] = 1.0 - t * t;
                        d2[i] = -2.0 * t * (1.0 - t * t);
                    }
                    break;
                case Activation::LeakyRelu: {
                    const double alpha = arch.leaky_alpha;
                    for (std::size_t i = 0; i < total; ++i) {
                        const double a = hk[i];
                        const double pos = a > 0.0;
                        d1[i] = pos + (1.0 - pos) * alpha;
                        d2[i] = 0.0;
                        hk[i] = a * d1[i];
                    }
                    break;
                }
                case Activation::None:
                    break;
            }
        }
    }
}

// Tangent forward for velocity seed `seed`; fills adot/hdot for all layers.
void block_tangent(const MlpArchitecture& arch, const FeatureMap& fm, int seed, int nb,
                   BlockScratch& ws) {
    const int L = arch.n_layers();
    const int m0 = arch.widths[0];
    const int off = fm.velocity_offset();
    std::vector<double>* adot = &ws.adot[static_cast<std::size_t>(seed) * (L + 1)];
    std::vector<double>* hdot = &ws.hdot[static_cast<std::size_t>(seed) * (L + 1)];
    std::fill(hdot[0].begin(), hdot[0].begin() + static_cast<std::size_t>(nb) * m0, 0.0);
    for (int p = 0; p < nb; ++p) hdot[0][static_cast<std::size_t>(p) * m0 + off + seed] = 1.0;
    for (int k = 0; k < L; ++k) {
        const int rows = arch.widths[k + 1], cols = arch.widths[k];
        batch_affine(ws.wt[k].data(), nullptr, hdot[k].data(), nb, rows, cols,
                     adot[k + 1].data());
        const std::size_t total = static_cast<std::size_t>(nb) * rows;
        if (k + 1 < L) {
            const double* d1 = ws.d1[k + 1].data();
            const double* a = adot[k + 1].data();
            double* out = hdot[k + 1].data();
            for (std::size_t i = 0; i < total; ++i) out[i] = d1[i] * a[i];
        } else {
            std::memcpy(hdot[L].data(), adot[L].data(), sizeof(double) * total);
        }
    }
}

// Reverse sweeps over the stored block state; accumulates into g.
void block_reverse(const MlpArchitecture& arch, const MlpParams& params, int nb, bool use_div,
                   BlockScratch& ws, double* g) {
    const int L = arch.n_layers();
    const int out = arch.widths[L];
    for (int k = 1; k < L; ++k)
        std::fill(ws.spre[k].begin(),
                  ws.spre[k].begin() + static_cast<std::size_t>(nb) * arch.widths[k], 0.0);

    if (use_div) {
        // Pull the scalar div_bar_p * (output tangent)_seed back through
        // each velocity-seeded tangent pass.
        for (int seed = 0; seed < out; ++seed) {
            const std::vector<double>* adot = &ws.adot[static_cast<std::size_t>(seed) * (L + 1)];
            const std::vector<double>* hdot = &ws.hdot[static_cast<std::size_t>(seed) * (L + 1)];
            double* r = ws.A.data();
            double* rn = ws.P.data();
            std::fill(r, r + static_cast<std::size_t>(nb) * out, 0.0);
            for (int p = 0; p < nb; ++p)
                r[static_cast<std::size_t>(p) * out + seed] = ws.div_bar[p];
            for (int k = L - 1; k >= 0; --k) {
                const double* W = params.values.data() + arch.weight_offset(k);
                double* Wg = g + arch.weight_offset(k);
                const int rows = arch.widths[k + 1], cols = arch.widths[k];
                for (int p = 0; p < nb; ++p) {
                    const double* ad = adot[k + 1].data() + static_cast<std::size_t>(p) * rows;
                    double* rp = r + static_cast<std::size_t>(p) * rows;
                    const double* tin = hdot[k].data() + static_cast<std::size_t>(p) * cols;
                    double* rnp = rn + static_cast<std::size_t>(p) * cols;
                    if (k + 1 < L) {
                        const double* d1 =
                            ws.d1[k + 1].data() + static_cast<std::size_t>(p) * rows;
                        const double* d2 =
                            ws.d2[k + 1].data() + static_cast<std::size_t>(p) * rows;
                        double* sp = ws.spre[k + 1].data() + static_cast<std::size_t>(p) * rows;
                        for (int j = 0; j < rows; ++j) {
                            sp[j] += d2[j] * ad[j] * rp[j];
                            rp[j] *= d1[j];  // now the adjoint of adot_{k+1}
                        }
                    }
                    for (int i = 0; i < cols; ++i) rnp[i] = 0.0;
                    for (int j = 0; j < rows; ++j) {
                        const double rdot = rp[j];
                        if (rdot == 0.0) continue;
                        const double* wr = W + static_cast<std::size_t>(j) * cols;
                        double* wg = Wg + static_cast<std::size_t>(j) * cols;
                        for (int i = 0; i < cols; ++i) {
                            wg[i] += rdot * tin[i];
                            rnp[i] += rdot * wr[i];
                        }
                    }
                }
                std::swap(r, rn);
            }
        }
    }

    // Primal adjoint sweep seeded by u_bar plus the tangent-path
    // pre-activation adjoints.
    double* A = ws.A.data();
    double* P = ws.P.data();
    for (int p = 0; p < nb; ++p)
        for (int j = 0; j < out; ++j)
            A[static_cast<std::size_t>(p) * out + j] = ws.u_bar[static_cast<std::size_t>(p) * out + j];
    for (int k = L - 1; k >= 0; --k) {
        const double* W = params.values.data() + arch.weight_offset(k);
        double* Wg = g + arch.weight_offset(k);
        double* bg = g + arch.bias_offset(k);
        const int rows = arch.widths[k + 1], cols = arch.widths[k];
        for (int p = 0; p < nb; ++p) {
            const double* hk = ws.h[k].data() + static_cast<std::size_t>(p) * cols;
            const double* Ap = A + static_cast<std::size_t>(p) * rows;
            double* Pp = P + static_cast<std::size_t>(p) * cols;
            if (k > 0)
                for (int i = 0; i < cols; ++i) Pp[i] = 0.0;
            for (int j = 0; j < rows; ++j) {
                const double aj = Ap[j];
                bg[j] += aj;
                if (aj == 0.0) continue;
                const double* wr = W + static_cast<std::size_t>(j) * cols;
                double* wg = Wg + static_cast<std::size_t>(j) * cols;
                if (k > 0) {
                    for (int i = 0; i < cols; ++i) {
                        wg[i] += aj * hk[i];
                        Pp[i] += aj * wr[i];
                    }
                } else {
                    for (int i = 0; i < cols; ++i) wg[i] += aj * hk[i];
                }
            }
        }
        if (k > 0) {
            const int cols = arch.widths[k];
            for (int p = 0; p < nb; ++p) {
                const double* d1 = ws.d1[k].data() + static_cast<std::size_t>(p) * cols;
                const double* sp = ws.spre[k].data() + static_cast<std::size_t>(p) * cols;
                const double* Pp = P + static_cast<std::size_t>(p) * cols;
                double* An = A + static_cast<std::size_t>(p) * cols;
                for (int i = 0; i < cols; ++i) An[i] = sp[i] + d1[i] * Pp[i];
            }
        }
    }
}

}  // namespace

FieldKernel::FieldKernel(const MlpArchitecture& arch, const FeatureMap& fm)
    : arch_(arch), fm_(fm) {
    arch.validate(fm.output_dim(), arch.output_dim());
}

void FieldKernel::forward(const MlpParams& params, const double* xs, const double* vs, int n,
                          double* u_out, double* div_out) const {
    if (params.values.size() != arch_.param_count())
        throw std::invalid_argument("FieldKernel: parameter count mismatch");
    if (div_out && arch_.output_dim() != fm_.dim_v)
        throw std::invalid_argument("FieldKernel: divergence needs output dim == dim_v");
    const int L = arch_.n_layers();
    const int out = arch_.widths[L];
    const int nblocks = (n + kBlock - 1) / kBlock;
#ifdef _OPENMP
#pragma omp parallel
#endif
    {
        BlockScratch ws(arch_, kBlock, div_out ? fm_.dim_v : 1);
        ws.load_transposed_weights(arch_, params);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (int blk = 0; blk < nblocks; ++blk) {
            const int p0 = blk * kBlock;
            const int nb = std::min(kBlock, n - p0);
            block_forward(arch_, fm_, params, xs + static_cast<std::size_t>(p0) * fm_.dim_x,
                          vs + static_cast<std::size_t>(p0) * fm_.dim_v, nb, ws);
            for (int p = 0; p < nb; ++p)
                std::memcpy(u_out + static_cast<std::size_t>(p0 + p) * out,
                            ws.h[L].data() + static_cast<std::size_t>(p) * out,
                            sizeof(double) * out);
            if (div_out) {
                for (int p = 0; p < nb; ++p) div_out[p0 + p] = 0.0;
                for (int seed = 0; seed < out; ++seed) {
                    block_tangent(arch_, fm_, seed, nb, ws);
                    const std::vector<double>& hL =
                        ws.hdot[static_cast<std::size_t>(seed) * (L + 1) + L];
                    for (int p = 0; p < nb; ++p)
                        div_out[p0 + p] += hL[static_cast<std::size_t>(p) * out + seed];
                }
            }
        }
    }
}

double FieldKernel::loss_gradient(const MlpParams& params, const double* xs, const double* vs,
                                  int n, const ParticleLossFn& term, double* grad) const {
    if (params.values.size() != arch_.param_count())
        throw std::invalid_argument("FieldKernel: parameter count mismatch");
    if (arch_.output_dim() != fm_.dim_v)
        throw std::invalid_argument("FieldKernel: divergence needs output dim == dim_v");
    const int L = arch_.n_layers();
    const int out = arch_.widths[L];
    const std::size_t np = arch_.param_count();
    const int nblocks = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(static_cast<std::size_t>(nblocks) * np, 0.0);
    std::vector<double> block_loss(nblocks, 0.0);
    std::vector<int> bad(nblocks, -1);

#ifdef _OPENMP
#pragma omp parallel
#endif
    {
        BlockScratch ws(arch_, kBlock, fm_.dim_v);
        ws.load_transposed_weights(arch_, params);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (int blk = 0; blk < nblocks; ++blk) {
            const int p0 = blk * kBlock;
            const int nb = std::min(kBlock, n - p0);
            double* g = partial.data() + static_cast<std::size_t>(blk) * np;
            block_forward(arch_, fm_, params, xs + static_cast<std::size_t>(p0) * fm_.dim_x,
                          vs + static_cast<std::size_t>(p0) * fm_.dim_v, nb, ws);
            std::fill(ws.div.begin(), ws.div.begin() + nb, 0.0);
            for (int seed = 0; seed < out; ++seed) {
                block_tangent(arch_, fm_, seed, nb, ws);
                const std::vector<double>& hL =
                    ws.hdot[static_cast<std::size_t>(seed) * (L + 1) + L];
                for (int p = 0; p < nb; ++p)
                    ws.div[p] += hL[static_cast<std::size_t>(p) * out + seed];
            }
            for (int p = 0; p < nb; ++p) {
                ws.loss_term[p] = term(p0 + p, ws.h[L].data() + static_cast<std::size_t>(p) * out,
                                       ws.div[p], ws.u_bar.data() + static_cast<std::size_t>(p) * out,
                                       ws.div_bar[p]);
                if (!std::isfinite(ws.loss_term[p]) && bad[blk] < 0) bad[blk] = p0 + p;
            }
            double acc = 0.0;
            for (int p = 0; p < nb; ++p) acc += ws.loss_term[p];
            block_loss[blk] = acc;
            block_reverse(arch_, params, nb, true, ws, g);
        }
    }

    for (int blk = 0; blk < nblocks; ++blk)
        if (bad[blk] >= 0)
            throw std::runtime_error("loss evaluation: non-finite term at particle " +
                                     std::to_string(bad[blk]));

    // Fixed-order reductions keep the result independent of the thread count.
    std::fill(grad, grad + np, 0.0);
    for (int blk = 0; blk < nblocks; ++blk) {
        const double* g = partial.data() + static_cast<std::size_t>(blk) * np;
        for (std::size_t i = 0; i < np; ++i) grad[i] += g[i];
    }
    double loss = 0.0;
    for (int blk = 0; blk < nblocks; ++blk) loss += block_loss[blk];
    return loss;
}

void FieldKernel::gradient(const MlpParams& params, const double* xs, const double* vs, int n,
                           const double* u_bar, const double* div_bar, double* grad) const {
    if (params.values.size() != arch_.param_count())
        throw std::invalid_argument("FieldKernel: parameter count mismatch");
    if (div_bar && arch_.output_dim() != fm_.dim_v)
        throw std::invalid_argument("FieldKernel: divergence needs output dim == dim_v");
    const int out = arch_.output_dim();
    if (out == fm_.dim_v) {
        loss_gradient(
            params, xs, vs, n,
            [&](int p, const double*, double, double* ub, double& db) {
                for (int j = 0; j < out; ++j)
                    ub[j] = u_bar ? u_bar[static_cast<std::size_t>(p) * out + j] : 0.0;
                db = div_bar ? div_bar[p] : 0.0;
                return 0.0;
            },
            grad);
        return;
    }
    // Fields with a non-velocity output shape (no divergence term).
    std::fill(grad, grad + arch_.param_count(), 0.0);
    for (int p = 0; p < n; ++p)
        accumulate_param_vjp(arch_, fm_, params, xs + static_cast<std::size_t>(p) * fm_.dim_x,
                             vs + static_cast<std::size_t>(p) * fm_.dim_v,
                             u_bar + static_cast<std::size_t>(p) * out, grad);
}

}  // namespace kfp
