// Micro neural-network engine for the per-step control field: feature
// maps, forward pass, exact reverse-mode derivatives with respect to
// parameters and velocity inputs.
//
// Parameters are stored flat, layer by layer (row-major W_k then b_k),
// so optimizer state stays congruent by construction. The batch kernel
// accumulates gradients over fixed-size particle blocks that are reduced
// in block order, which keeps training bit-reproducible for any thread
// count.

#ifndef KFP_MLP_HPP
#define KFP_MLP_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace kfp {

enum class Activation { Tanh, LeakyRelu, None };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Input feature map. Both variants pass the velocity through unchanged,
/// which the velocity-divergence derivation relies on.
struct FeatureMap {
    enum class Kind { Identity, PeriodicEmbed };

    Kind kind = Kind::Identity;
    double omega = 0.0;  // PeriodicEmbed: x_i -> (sin(omega x_i), cos(omega x_i))
    int dim_x = 1;
    int dim_v = 1;

    static FeatureMap identity(int dim_x, int dim_v);
    static FeatureMap periodic_embed(double omega, int dim_x, int dim_v);

    int output_dim() const {
        return (kind == Kind::Identity ? dim_x : 2 * dim_x) + dim_v;
    }
    int velocity_offset() const {
        return kind == Kind::Identity ? dim_x : 2 * dim_x;
    }

    void apply(const double* x, const double* v, double* out) const;
    // JVP: tangent of the feature vector for input tangents (dx, dv);
    // either tangent pointer may be null (treated as zero).
    void tangent(const double* x, const double* dx, const double* dv,
                 double* dout) const;
};

struct MlpArchitecture {
    std::vector<int> widths;  // m_0 .. m_L
    Activation activation = Activation::Tanh;
    double leaky_alpha = 0.01;

    static MlpArchitecture affine(int in_dim, int out_dim);
    static MlpArchitecture mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
                               Activation act, double leaky_alpha = 0.01);

    int n_layers() const { return static_cast<int>(widths.size()) - 1; }
    int input_dim() const { return widths.front(); }
    int output_dim() const { return widths.back(); }
    std::size_t param_count() const;
    // Flat offset of W_k / b_k for layer k in [0, n_layers).
    std::size_t weight_offset(int k) const;
    std::size_t bias_offset(int k) const;

    void validate(int feature_dim, int out_dim) const;
};

struct MlpParams {
    std::vector<double> values;
};

/// Fan-in-scaled symmetric uniform weights (bound sqrt(1/m_{k-1})),
/// zero biases. Deterministic in the seed.
MlpParams init_params(const MlpArchitecture& arch, std::uint64_t seed);

void save_params(std::ostream& os, const MlpArchitecture& arch, const FeatureMap& fm,
                 const MlpParams& params);
void load_params(std::istream& is, MlpArchitecture& arch, FeatureMap& fm, MlpParams& params);

/// u_theta(x, v) at a single point.
void mlp_forward(const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                 const double* x, const double* v, double* u_out);

/// nabla_v . u_theta(x, v), one reverse pass per output component.
double divergence_v(const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                    const double* x, const double* v);

/// Accumulates d(u_bar . u)/d(theta) into grad (size param_count).
void accumulate_param_vjp(const MlpArchitecture& arch, const FeatureMap& fm,
                          const MlpParams& params, const double* x, const double* v,
                          const double* u_bar, double* grad);

/// Full input Jacobian du/d(x,v), row-major m_L x (dim_x + dim_v).
void input_jacobian(const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                    const double* x, const double* v, double* jac);

/// Per-particle loss contribution: receives the control value and its
/// velocity divergence, fills the cotangents, returns the loss term.
/// Must be pure; it is called concurrently for different particles.
using ParticleLossFn =
    std::function<double(int p, const double* u, double div, double* u_bar, double& div_bar)>;

/// Batched forward/divergence/gradient kernel over a particle ensemble.
/// Work runs over fixed-size particle blocks reduced in block order, so
/// results are bit-identical for any thread count.
class FieldKernel {
public:
    FieldKernel(const MlpArchitecture& arch, const FeatureMap& fm);

    /// u for all particles; optionally the velocity divergence as well.
    void forward(const MlpParams& params, const double* xs, const double* vs, int n,
                 double* u_out, double* div_out) const;

    /// Accumulates into grad (zeroed here, size param_count):
    ///   sum_p [ u_bar_p . du_p/dtheta + div_bar_p . d(div_p)/dtheta ]
    /// u_bar is n x dim_v; div_bar may be null.
    void gradient(const MlpParams& params, const double* xs, const double* vs, int n,
                  const double* u_bar, const double* div_bar, double* grad) const;

    /// One fused pass: forward, velocity divergence, per-particle loss
    /// terms and cotangents, and the parameter gradient. Returns the
    /// total loss; throws on a non-finite loss term naming the particle.
    double loss_gradient(const MlpParams& params, const double* xs, const double* vs, int n,
                         const ParticleLossFn& term, double* grad) const;

    static constexpr int kBlock = 256;

private:
    MlpArchitecture arch_;
    FeatureMap fm_;
};

}  // namespace kfp

#endif
