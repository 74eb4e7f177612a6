#include "branchsim/cost.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "branchsim/rng.hpp"
#include "branchsim/util.hpp"

namespace branchsim {

namespace {

double running_sum(const Segment& seg, const CostSpec& cost) {
    double total = 0.0;
    const auto& atoms = seg.state.atoms();
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        total += cost.running(atoms[i].label, atoms[i].pos, seg.state, seg.actions[i]);
    }
    return total;
}

void require_segments(const Trajectory& traj) {
    if (traj.segments.empty() && traj.T > traj.t0 && traj.initial_state.size() > 0) {
        throw std::invalid_argument("pathwise_cost: trajectory was recorded without segments");
    }
}

}  // namespace

double pathwise_cost(const Trajectory& traj, const CostSpec& cost) {
    require_segments(traj);
    double total = 0.0;
    for (const auto& seg : traj.segments) {
        if (seg.actions.size() != static_cast<std::size_t>(seg.state.size())) {
            throw std::invalid_argument("pathwise_cost: segment actions missing");
        }
        total += seg.h * running_sum(seg, cost);
    }
    return total + cost.terminal(traj.final_state);
}

double pathwise_cost(const Trajectory& traj, const CostSpec& cost, const ControlPolicy& policy) {
    require_segments(traj);
    double total = 0.0;
    for (const auto& seg : traj.segments) {
        double rate = 0.0;
        for (const auto& at : seg.state.atoms()) {
            Eigen::VectorXd a = policy.act(seg.t_left, at.label, at.pos, seg.state);
            rate += cost.running(at.label, at.pos, seg.state, a);
        }
        total += seg.h * rate;
    }
    return total + cost.terminal(traj.final_state);
}

CostEstimate estimate_J(const Configuration& initial, const ControlPolicy& policy,
                        const ModelCoefficients& model, const CostSpec& cost, const SimConfig& cfg,
                        int replicates, int threads) {
    if (replicates < 2) throw std::invalid_argument("estimate_J: need at least 2 replicates");
    if (threads < 1) throw std::invalid_argument("estimate_J: need at least 1 worker");

    const double kDiscard = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> samples(static_cast<std::size_t>(replicates), kDiscard);

    auto worker = [&](int lo, int hi) {
        for (int r = lo; r < hi; ++r) {
            SimConfig run = cfg;
            run.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
            run.record_frames = false;
            run.record_segments = true;
            try {
                Trajectory traj = simulate(initial, policy, model, run);
                samples[static_cast<std::size_t>(r)] = pathwise_cost(traj, cost);
            } catch (const CapExceeded&) {
                // leave the NaN marker; accounted for below
            }
        }
    };

    if (threads == 1) {
        worker(0, replicates);
    } else {
        std::vector<std::thread> pool;
        int chunk = (replicates + threads - 1) / threads;
        for (int w = 0; w < threads; ++w) {
            int lo = w * chunk;
            int hi = std::min(replicates, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(worker, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    CostEstimate est;
    est.samples.reserve(samples.size());
    for (double s : samples) {
        if (std::isnan(s)) {
            ++est.discarded;
        } else {
            est.samples.push_back(s);
        }
    }
    if (est.discarded > 0.01 * replicates) {
        std::ostringstream msg;
        msg << "estimate_J: " << est.discarded << " of " << replicates
            << " replicates hit a cap (limit is 1%)";
        throw std::runtime_error(msg.str());
    }
    if (est.samples.size() < 2) throw std::runtime_error("estimate_J: fewer than 2 usable samples");
    MeanSE m = mean_se(est.samples);
    est.mean = m.mean;
    est.std_error = m.se;
    est.replicates = static_cast<int>(est.samples.size());
    est.min = *std::min_element(est.samples.begin(), est.samples.end());
    est.max = *std::max_element(est.samples.begin(), est.samples.end());
    return est;
}

namespace {

// Population at a checkpoint, read off the recorded sub-steps.  Checkpoints
// are sub-step boundaries by construction, so the state frozen at the
// matching segment's left endpoint is exact.
Configuration state_at_checkpoint(const Trajectory& traj, double s, double tol) {
    if (s >= traj.T - tol) return traj.final_state;
    for (const auto& seg : traj.segments) {
        if (seg.t_left >= s - tol) {
            if (seg.t_left <= s + tol) return seg.state;
            break;
        }
    }
    if (traj.extinct && traj.extinction_time <= s + tol) {
        return Configuration(traj.initial_state.dim());
    }
    throw std::logic_error("verification_residual: checkpoint missed every sub-step boundary");
}

}  // namespace

ResidualReport verification_residual(const ValueFunction& w, const Configuration& initial,
                                     const ControlPolicy& policy, const ModelCoefficients& model,
                                     const CostSpec& cost, const SimConfig& cfg, int replicates,
                                     int n_checkpoints) {
    if (replicates < 2) throw std::invalid_argument("verification_residual: need >= 2 replicates");
    if (n_checkpoints < 1) throw std::invalid_argument("verification_residual: need >= 1 checkpoint");
    const double span = cfg.T - cfg.t0;
    const double spacing = span / n_checkpoints;
    const double steps_per_gap = spacing / cfg.dt;
    const long m = std::lround(steps_per_gap);
    if (m < 1 || std::abs(steps_per_gap - static_cast<double>(m)) > 1e-9) {
        throw std::invalid_argument(
            "verification_residual: checkpoint spacing must be a multiple of dt");
    }
    const double tol = 1e-9;

    const int n = n_checkpoints;
    std::vector<std::vector<double>> gap_samples(static_cast<std::size_t>(n));
    ResidualReport rep;

    for (int r = 0; r < replicates; ++r) {
        SimConfig run = cfg;
        run.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
        run.record_frames = false;
        run.record_segments = true;
        Trajectory traj;
        try {
            traj = simulate(initial, policy, model, run);
        } catch (const CapExceeded&) {
            ++rep.discarded;
            continue;
        }

        std::vector<double> M(static_cast<std::size_t>(n) + 1, 0.0);
        bool escaped = false;
        double integral = 0.0;
        std::size_t seg_idx = 0;
        for (int j = 0; j <= n && !escaped; ++j) {
            double s = (j == n) ? cfg.T : cfg.t0 + static_cast<double>(j * m) * cfg.dt;
            while (seg_idx < traj.segments.size() &&
                   traj.segments[seg_idx].t_left + traj.segments[seg_idx].h <= s + tol) {
                integral += traj.segments[seg_idx].h * running_sum(traj.segments[seg_idx], cost);
                ++seg_idx;
            }
            try {
                Configuration xi = (j == 0) ? initial : state_at_checkpoint(traj, s, tol);
                M[static_cast<std::size_t>(j)] = w(s, xi) + integral;
            } catch (const ValueUndefined&) {
                escaped = true;
            }
        }
        if (escaped) {
            ++rep.escaped;
            continue;
        }
        for (int j = 0; j < n; ++j) {
            gap_samples[static_cast<std::size_t>(j)].push_back(
                M[static_cast<std::size_t>(j) + 1] - M[static_cast<std::size_t>(j)]);
        }
        ++rep.replicates;
    }

    int lost = rep.discarded + rep.escaped;
    if (lost > 0.01 * replicates) {
        std::ostringstream msg;
        msg << "verification_residual: lost " << lost << " of " << replicates
            << " replicates (discarded " << rep.discarded << ", value undefined on " << rep.escaped
            << ")";
        throw std::runtime_error(msg.str());
    }

    rep.martingale_ok = true;
    rep.submartingale_ok = true;
    for (int j = 0; j < n; ++j) {
        MeanSE g = mean_se(gap_samples[static_cast<std::size_t>(j)]);
        ResidualGap gap;
        gap.t_left = cfg.t0 + static_cast<double>(j) * spacing;
        gap.t_right = (j + 1 == n) ? cfg.T : cfg.t0 + static_cast<double>(j + 1) * spacing;
        gap.mean = g.mean;
        gap.se = g.se;
        rep.gaps.push_back(gap);
        if (std::abs(gap.mean) > 3.0 * gap.se) rep.martingale_ok = false;
        if (gap.mean < -3.0 * gap.se) rep.submartingale_ok = false;
    }
    return rep;
}

std::string ResidualReport::summary() const {
    std::ostringstream os;
    os << "martingale " << (martingale_ok ? "pass" : "fail") << ", submartingale "
       << (submartingale_ok ? "pass" : "fail") << "; replicates " << replicates << " (discarded "
       << discarded << ", escaped " << escaped << ")";
    double worst = 0.0;
    for (const auto& g : gaps) {
        double z = g.se > 0 ? std::abs(g.mean) / g.se : (g.mean == 0.0 ? 0.0 : HUGE_VAL);
        worst = std::max(worst, z);
    }
    os << "; worst |mean|/se " << format_double(worst);
    return os.str();
}

std::string ResidualReport::to_csv() const {
    std::ostringstream os;
    os << "checkpoint,gap_mean,gap_se,verdict\n";
    for (const auto& g : gaps) {
        const char* verdict = std::abs(g.mean) <= 3.0 * g.se ? "zero"
                              : g.mean > 0.0                 ? "above"
                                                             : "below";
        os << format_double(g.t_right) << ',' << format_double(g.mean) << ','
           << format_double(g.se) << ',' << verdict << '\n';
    }
    return os.str();
}

GrowthReport growth_report(const std::vector<std::pair<Configuration, double>>& samples) {
    if (samples.size() < 10) throw std::invalid_argument("growth_report: need >= 10 samples");

    struct Need {
        double mass = 0.0;
        double need = 0.0;  // max of lower and upper envelope demand
        double value = 0.0;
    };
    std::vector<Need> needs;
    needs.reserve(samples.size());
    GrowthReport rep;
    for (const auto& [lam, value] : samples) {
        double n = lam.mass();
        double upper_env = 1.0 + n * n + lam.sum_sq();
        double lower_env = 1.0 + n + lam.sum_norm1();
        double need_up = std::max(0.0, value) / upper_env;
        double need_low = std::max(0.0, -value) / lower_env;
        rep.c_upper = std::max(rep.c_upper, need_up);
        rep.c_lower = std::max(rep.c_lower, need_low);
        needs.push_back({n, std::max(need_up, need_low), value});
    }
    rep.c = std::max(rep.c_lower, rep.c_upper);

    // Held-out check: fit the constant on the small-mass half, then see
    // whether any large-mass sample needs more than 1.5x that constant.
    std::sort(needs.begin(), needs.end(), [](const Need& a, const Need& b) { return a.mass < b.mass; });
    std::size_t half = needs.size() / 2;
    double c_fit = 0.0;
    for (std::size_t i = 0; i < half; ++i) c_fit = std::max(c_fit, needs[i].need);
    for (std::size_t i = half; i < needs.size(); ++i) {
        if (needs[i].need > 1.5 * c_fit + 1e-9) {
            rep.violation = true;
            std::ostringstream os;
            os << "sample with mass " << format_double(needs[i].mass) << " and value "
               << format_double(needs[i].value) << " needs constant " << format_double(needs[i].need)
               << " but the small-mass half fits with " << format_double(c_fit);
            rep.witness = os.str();
            break;
        }
    }
    return rep;
}

std::string GrowthReport::summary() const {
    std::ostringstream os;
    os << "growth constant " << format_double(c) << " (lower " << format_double(c_lower)
       << ", upper " << format_double(c_upper) << ")"
       << (violation ? "; envelope violation: " + witness : "; envelope stable across masses");
    return os.str();
}

}  // namespace branchsim
