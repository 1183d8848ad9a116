#include "brf/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "brf/spike_ops.hpp"

namespace brf {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

Matrix zero_or(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    if (m.size() == 0) return Matrix::Zero(rows, cols);
    require(m.rows() == rows && m.cols() == cols, "terminal adjoint shape mismatch");
    return m;
}

}  // namespace

BackwardResult backward(const NetworkConfig& c, const WeightSet& w, const Trajectory& tr, const Matrix& dlogits,
                        const BackwardOptions& opt) {
    const int T = tr.length();
    require(T >= 1, "empty trajectory");
    const Eigen::Index B = tr.batch_size();
    const int n_h = c.n_hidden;
    const int n_out = c.n_out;
    require(tr.kind == c.kind, "trajectory neuron kind does not match config");
    require(dlogits.rows() == n_out && dlogits.cols() == B, "logit gradient shape mismatch");
    require(tr.z.front().rows() == n_h && w.w_rec.rows() == n_h, "trajectory does not match weights");
    require(static_cast<int>(tr.inputs.size()) == T && static_cast<int>(tr.y.size()) == T,
            "trajectory arrays have inconsistent lengths");

    const bool dense = tr.spike_function == SpikeFunction::Relaxed;
    const auto& sur = c.surrogate;
    const double delta = c.delta;
    const auto flags = c.flags;
    const bool resonator = c.kind == NeuronKind::Resonator;
    const bool q_grad = c.backprop_refractory && flags.tracks_refractory();

    BackwardResult result;
    GradientSet& g = result.grads;
    g = w.zeros_like();
    if (opt.record_adjoint_norms) result.adjoint_norms.assign(static_cast<std::size_t>(T), 0.0);

    const Vector decay = w.readout_decay();
    Vector decay_grad = Vector::Zero(n_out);
    const Matrix zero_h = Matrix::Zero(n_h, B);
    const Matrix zero_out = Matrix::Zero(n_out, B);

    Matrix ybar = Matrix::Zero(n_out, B);
    Matrix zbar_carry = Matrix::Zero(n_h, B);

    // Resonator adjoints.
    Matrix a_re, a_im, q_bar;
    Vector base_b, boundary_slope;
    // ALIF adjoints.
    Matrix u_bar, eta_bar;
    Vector alpha, rho, alpha_grad, rho_grad;

    if (resonator) {
        a_re = zero_or(opt.terminal_u_re, n_h, B);
        a_im = zero_or(opt.terminal_u_im, n_h, B);
        q_bar = Matrix::Zero(n_h, B);
        base_b.resize(n_h);
        boundary_slope = Vector::Zero(n_h);
        for (int i = 0; i < n_h; ++i) {
            base_b(i) = dynamics::base_dampening(w.omega(i), w.b_offset(i), delta, flags);
            if (flags.divergence_boundary) boundary_slope(i) = dynamics::divergence_boundary_slope(w.omega(i), delta);
        }
    } else {
        u_bar = zero_or(opt.terminal_u_re, n_h, B);
        eta_bar = Matrix::Zero(n_h, B);
        alpha = w.alif_alpha();
        rho = w.alif_rho();
        alpha_grad = Vector::Zero(n_h);
        rho_grad = Vector::Zero(n_h);
    }

    const double inv_t = 1.0 / static_cast<double>(T);

    for (int t = T - 1; t >= 0; --t) {
        // Leaky-integrator readout.
        if (c.readout == ReadoutReduction::Mean) {
            ybar = dlogits * inv_t + decay.asDiagonal() * ybar;
        } else {
            ybar = decay.asDiagonal() * ybar;
            if (t == T - 1) ybar += dlogits;
        }
        Matrix drive = Matrix::Zero(n_out, B);
        add_product(w.w_out, tr.z[t], drive, dense);
        const Matrix& y_prev = t > 0 ? tr.y[t - 1] : zero_out;
        decay_grad += (ybar.array() * (y_prev - drive).array()).rowwise().sum().matrix();
        const Matrix rbar = (Vector::Ones(n_out) - decay).asDiagonal() * ybar;
        add_outer(rbar, tr.z[t], g.w_out, dense);

        Matrix zbar = zbar_carry;
        zbar.noalias() += w.w_out.transpose() * rbar;

        Matrix x_bar(n_h, B);
        double norm_sq = 0.0;
        const Matrix& z_prev = t > 0 ? tr.z[t - 1] : zero_h;

        if (resonator) {
            if (q_grad) zbar += q_bar;
            const Matrix& ur_prev = t > 0 ? tr.u_re[t - 1] : zero_h;
            const Matrix& ui_prev = t > 0 ? tr.u_im[t - 1] : zero_h;
            const Matrix& q_prev = (t > 0 && flags.tracks_refractory()) ? tr.q[t - 1] : zero_h;
            const Matrix& ur_pre = flags.hard_reset ? tr.u_re_pre[t] : tr.u_re[t];
            const Matrix& ui_pre = flags.hard_reset ? tr.u_im_pre[t] : tr.u_im[t];
            const Matrix& z_now = tr.z[t];
            Matrix q_bar_prev = Matrix::Zero(n_h, B);
            for (Eigen::Index b = 0; b < B; ++b) {
                for (int i = 0; i < n_h; ++i) {
                    double ar = a_re(i, b);
                    double ai = a_im(i, b);
                    double zb = zbar(i, b);
                    if (flags.hard_reset) {
                        const double z = z_now(i, b);
                        zb += -ur_pre(i, b) * ar + (1.0 - ui_pre(i, b)) * ai;
                        ar *= 1.0 - z;
                        ai *= 1.0 - z;
                    }
                    const double qp = q_prev(i, b);
                    const double theta = flags.refractory_period ? c.theta_c + qp : c.theta_c;
                    const double vbar = zb * surrogate_derivative(ur_pre(i, b) - theta, sur);
                    ar += vbar;
                    double qbp = 0.0;
                    if (q_grad && flags.refractory_period) qbp -= vbar;
                    norm_sq += ar * ar + ai * ai;

                    const double omega = w.omega(i);
                    const double bt = dynamics::dampening_from_base(base_b(i), qp, flags);
                    const double bbar = delta * (ar * ur_prev(i, b) + ai * ui_prev(i, b));
                    x_bar(i, b) = delta * ar;
                    g.omega(i) += delta * (ai * ur_prev(i, b) - ar * ui_prev(i, b)) + bbar * boundary_slope(i);
                    g.b_offset(i) -= bbar;
                    if (q_grad) {
                        if (flags.smooth_reset) qbp -= bbar;
                        qbp += c.gamma * q_bar(i, b);
                    }
                    // Transpose of the 2x2 state Jacobian.
                    const auto J = dynamics::state_jacobian(bt, omega, delta);
                    a_re(i, b) = J.a00 * ar + J.a10 * ai;
                    a_im(i, b) = J.a01 * ar + J.a11 * ai;
                    q_bar_prev(i, b) = qbp;
                }
            }
            q_bar = std::move(q_bar_prev);
            zbar_carry.setZero();
        } else {
            const Matrix& u_prev = t > 0 ? tr.u_re[t - 1] : zero_h;
            const Matrix& eta_prev = t > 0 ? tr.eta[t - 1] : zero_h;
            const Matrix& u_now = tr.u_re[t];
            const Matrix& eta_now = tr.eta[t];
            const Matrix& x_now = tr.net_input[t];
            for (Eigen::Index b = 0; b < B; ++b) {
                for (int i = 0; i < n_h; ++i) {
                    const double beta = w.alif_beta(i);
                    const double theta = c.theta_c + beta * eta_now(i, b);
                    // with an infinite threshold the reset path carries inf into zbar; its surrogate weight is 0
                    const double sd = surrogate_derivative(u_now(i, b) - theta, sur);
                    const double vbar = sd == 0.0 ? 0.0 : zbar(i, b) * sd;
                    const double ub = u_bar(i, b) + vbar;
                    const double eb = eta_bar(i, b) - beta * vbar;
                    g.alif_beta(i) -= vbar * eta_now(i, b);
                    norm_sq += ub * ub + eb * eb;

                    x_bar(i, b) = (1.0 - alpha(i)) * ub;
                    alpha_grad(i) += ub * (u_prev(i, b) - x_now(i, b));
                    const double zp = z_prev(i, b);
                    const double theta_prev = c.theta_c + beta * eta_prev(i, b);
                    u_bar(i, b) = alpha(i) * ub;
                    zbar_carry(i, b) = -theta_prev * ub + (1.0 - rho(i)) * eb;
                    eta_bar(i, b) = rho(i) * eb - beta * zp * ub;
                    g.alif_beta(i) -= eta_prev(i, b) * zp * ub;
                    rho_grad(i) += eb * (eta_prev(i, b) - zp);
                }
            }
        }

        if (opt.record_adjoint_norms) result.adjoint_norms[static_cast<std::size_t>(t)] = std::sqrt(norm_sq);

        g.w_in.noalias() += x_bar * tr.inputs[t].transpose();
        if (t > 0) {
            add_outer(x_bar, z_prev, g.w_rec, dense);
            zbar_carry.noalias() += w.w_rec.transpose() * x_bar;
        }
    }

    g.readout_decay_raw = (decay_grad.array() * decay.array() * (1.0 - decay.array())).matrix();
    if (!resonator) {
        g.alif_alpha_raw = (alpha_grad.array() * alpha.array() * (1.0 - alpha.array())).matrix();
        g.alif_rho_raw = (rho_grad.array() * rho.array() * (1.0 - rho.array())).matrix();
    }
    return result;
}

double gradient_norm(const GradientSet& grads) {
    double sq = 0.0;
    grads.for_each([&](const char*, const auto& m) { sq += m.squaredNorm(); });
    return std::sqrt(sq);
}

double clip_gradients(GradientSet& grads, double max_norm) {
    const double norm = gradient_norm(grads);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        grads.for_each([&](const char*, auto& m) { m *= s; });
    }
    return norm;
}

AdamState AdamState::zeros_like(const WeightSet& weights, AdamConfig config) {
    AdamState s;
    s.config = config;
    s.m = weights.zeros_like();
    s.v = weights.zeros_like();
    return s;
}

nlohmann::json AdamState::to_json() const {
    nlohmann::json mj, vj;
    m.for_each([&](const char* name, const auto& a) { mj[name] = matrix_to_json(a); });
    v.for_each([&](const char* name, const auto& a) { vj[name] = matrix_to_json(a); });
    return {{"lr", config.lr},       {"lr_neuron", config.lr_neuron}, {"beta1", config.beta1},
            {"beta2", config.beta2}, {"eps", config.eps},             {"step", step},
            {"m", mj},               {"v", vj}};
}

AdamState AdamState::from_json(const nlohmann::json& j) {
    AdamState s;
    s.config = {j.at("lr").get<double>(), j.at("lr_neuron").get<double>(), j.at("beta1").get<double>(),
                j.at("beta2").get<double>(), j.at("eps").get<double>()};
    s.step = j.at("step").get<long>();
    const auto load = [](WeightSet& ws, const nlohmann::json& src) {
        ws.for_each([&](const char* name, auto& a) {
            const Matrix loaded = matrix_from_json(src.at(name));
            if constexpr (std::is_same_v<std::decay_t<decltype(a)>, Vector>) {
                a = Eigen::Map<const Vector>(loaded.data(), loaded.size());
            } else {
                a = loaded;
            }
        });
    };
    load(s.m, j.at("m"));
    load(s.v, j.at("v"));
    return s;
}

void adam_step(WeightSet& weights, const GradientSet& grads, AdamState& state) {
    ++state.step;
    const auto& cfg = state.config;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double lr_neuron = cfg.lr_neuron < 0.0 ? cfg.lr : cfg.lr_neuron;

    // Matrices are synaptic weights, vectors are per-neuron parameters.
    const auto apply = [&](auto& p, const auto& g, auto& m, auto& v, double lr) {
        require(p.size() == g.size() && p.size() == m.size(), "Adam shape mismatch");
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    };
    apply(weights.w_in, grads.w_in, state.m.w_in, state.v.w_in, cfg.lr);
    apply(weights.w_rec, grads.w_rec, state.m.w_rec, state.v.w_rec, cfg.lr);
    apply(weights.w_out, grads.w_out, state.m.w_out, state.v.w_out, cfg.lr);
    apply(weights.omega, grads.omega, state.m.omega, state.v.omega, lr_neuron);
    apply(weights.b_offset, grads.b_offset, state.m.b_offset, state.v.b_offset, lr_neuron);
    apply(weights.alif_alpha_raw, grads.alif_alpha_raw, state.m.alif_alpha_raw, state.v.alif_alpha_raw, lr_neuron);
    apply(weights.alif_rho_raw, grads.alif_rho_raw, state.m.alif_rho_raw, state.v.alif_rho_raw, lr_neuron);
    apply(weights.alif_beta, grads.alif_beta, state.m.alif_beta, state.v.alif_beta, lr_neuron);
    apply(weights.readout_decay_raw, grads.readout_decay_raw, state.m.readout_decay_raw,
          state.v.readout_decay_raw, lr_neuron);
}

void project_params(WeightSet& w, const NetworkConfig& config, const ProjectionSpec& spec) {
    const double omega_max = (1.0 - spec.margin) / config.delta;
    for (Eigen::Index i = 0; i < w.omega.size(); ++i) w.omega(i) = std::clamp(w.omega(i), spec.omega_floor, omega_max);
    for (Eigen::Index i = 0; i < w.b_offset.size(); ++i) w.b_offset(i) = std::max(w.b_offset(i), 0.0);
    for (Eigen::Index i = 0; i < w.alif_beta.size(); ++i) w.alif_beta(i) = std::max(w.alif_beta(i), 0.0);
}

}  // namespace brf
