#include "branchsim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "branchsim/rng.hpp"

namespace branchsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Particle {
    Label label;
    Eigen::VectorXd pos;
    NoiseKey key;
    double next_candidate = kInf;
    std::uint64_t clock_ctr = 0;
    std::uint64_t diff_ctr = 0;
    std::uint64_t mark_ctr = 0;
};

}  // namespace

Trajectory simulate(const Configuration& initial, const ControlPolicy& policy,
                    const ModelCoefficients& model, const SimConfig& cfg) {
    if (initial.dim() != model.dim) throw std::invalid_argument("simulate: population/model dimension mismatch");
    if (!initial.admissible()) throw std::invalid_argument("simulate: initial population is not admissible");
    if (!(cfg.dt > 0.0)) throw std::invalid_argument("simulate: dt must be positive");
    if (!(cfg.T >= cfg.t0)) throw std::invalid_argument("simulate: empty time interval");
    if (policy.adim != model.adim) throw std::invalid_argument("simulate: policy/model action dimension mismatch");
    if (initial.size() > cfg.max_population) throw CapExceeded("simulate: initial population above cap");

    const double cap_rate = model.bounds.rate_cap;
    auto noise_label = [&](const Label& l) { return cfg.noise_label_map ? cfg.noise_label_map(l) : l; };

    Trajectory out;
    out.t0 = cfg.t0;
    out.T = cfg.T;
    out.dt = cfg.dt;
    out.seed = cfg.seed;
    out.initial_state = initial;
    out.final_state = Configuration(model.dim);

    std::vector<Particle> parts;  // sorted by label; kept sorted through events
    parts.reserve(initial.size() + 8);
    double t = cfg.t0;
    for (const auto& a : initial.atoms()) {
        Particle p;
        p.label = a.label;
        p.pos = a.pos;
        p.key = NoiseKey(cfg.seed, noise_label(a.label));
        p.next_candidate =
            cap_rate > 0.0 ? t + noise_exponential(p.key, NoiseStream::Clock, p.clock_ctr++, cap_rate) : kInf;
        parts.push_back(std::move(p));
    }

    auto snapshot = [&]() {
        std::vector<Atom> atoms;
        atoms.reserve(parts.size());
        for (const auto& p : parts) atoms.push_back(Atom{p.label, p.pos});
        return Configuration(model.dim, std::move(atoms));
    };

    if (cfg.record_frames) out.frames.emplace_back(t, snapshot());

    std::uint64_t k_next = 1;              // index of the next Euler grid boundary
    std::uint64_t candidates_resolved = 0;

    std::vector<Eigen::VectorXd> actions;
    while (!parts.empty()) {
        // next candidate time across particles (ties: first in label order)
        std::size_t cand_idx = 0;
        double t_cand = kInf;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (parts[i].next_candidate < t_cand) {
                t_cand = parts[i].next_candidate;
                cand_idx = i;
            }
        }
        double t_bound = cfg.t0 + static_cast<double>(k_next) * cfg.dt;
        if (t_bound > cfg.T) t_bound = cfg.T;
        double t_next = std::min({cfg.T, t_bound, t_cand});

        double h = t_next - t;
        if (h > 0.0) {
            // freeze the state and per-particle actions at the left endpoint
            Configuration frozen = snapshot();
            actions.clear();
            for (const auto& p : parts) actions.push_back(policy.act(t, p.label, p.pos, frozen));
            if (cfg.record_segments) out.segments.push_back(Segment{t, h, frozen, actions});
            double sqh = std::sqrt(h);
            for (std::size_t i = 0; i < parts.size(); ++i) {
                Particle& p = parts[i];
                Eigen::VectorXd b = model.drift(p.label, p.pos, frozen, actions[i]);
                Eigen::MatrixXd s = model.diffusion(p.label, p.pos, frozen, actions[i]);
                Eigen::VectorXd dw(model.wdim);
                for (int w = 0; w < model.wdim; ++w)
                    dw[w] = sqh * noise_normal(p.key, NoiseStream::Diffusion, p.diff_ctr++);
                p.pos += h * b + s * dw;
            }
        }
        t = t_next;
        if (t == cfg.T) break;

        if (t == t_bound) {
            ++k_next;
            if (cfg.record_frames) out.frames.emplace_back(t, snapshot());
        }

        if (t == t_cand) {
            if (++candidates_resolved > cfg.max_events)
                throw CapExceeded("simulate: candidate event cap exceeded at t=" + std::to_string(t));
            Particle& p = parts[cand_idx];
            double u = noise_uniform(p.key, NoiseStream::Mark, p.mark_ctr++);
            double z = cap_rate * u;
            // thinning against the state at the candidate time (left limit)
            Configuration now = snapshot();
            Eigen::VectorXd a = policy.act(t, p.label, p.pos, now);
            double gamma = model.branch_rate(p.label, p.pos, now, a);
            if (gamma < 0.0 || gamma > cap_rate * (1.0 + 1e-12))
                throw std::runtime_error("simulate: branch rate outside [0, cap] at t=" + std::to_string(t));
            if (z < gamma) {
                OffspringLaw law = model.offspring(p.label, p.pos, now, a);
                law.validate();
                std::uint32_t k = law.pick(z, gamma);
                Label parent = p.label;
                Eigen::VectorXd birth_pos = p.pos;
                if (parts.size() - 1 + k > cfg.max_population)
                    throw CapExceeded("simulate: population cap exceeded at t=" + std::to_string(t));
                // children occupy the parent's slot in label order
                parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(cand_idx));
                for (std::uint32_t c = 0; c < k; ++c) {
                    Particle child;
                    child.label = parent.child(c);
                    child.pos = birth_pos;
                    child.key = NoiseKey(cfg.seed, noise_label(child.label));
                    parts.insert(parts.begin() + static_cast<std::ptrdiff_t>(cand_idx + c), std::move(child));
                }
                // memoryless reseat of every clock after the event
                for (auto& q : parts) {
                    q.next_candidate =
                        cap_rate > 0.0
                            ? t + noise_exponential(q.key, NoiseStream::Clock, q.clock_ctr++, cap_rate)
                            : kInf;
                }
                Event ev;
                ev.kind = Event::Kind::Branch;
                ev.time = t;
                ev.parent = parent;
                ev.k = k;
                ev.after = snapshot();
                out.events.push_back(std::move(ev));
                if (parts.empty()) {
                    out.extinct = true;
                    out.extinction_time = t;
                    break;
                }
            } else {
                // rejected candidate: redraw this particle's clock only
                p.next_candidate =
                    t + noise_exponential(p.key, NoiseStream::Clock, p.clock_ctr++, cap_rate);
            }
        }
    }

    // extinction leaves an empty population for the rest of the horizon
    if (out.extinct && cfg.record_frames) {
        for (; cfg.t0 + static_cast<double>(k_next) * cfg.dt < cfg.T; ++k_next) {
            double tb = cfg.t0 + static_cast<double>(k_next) * cfg.dt;
            if (tb >= out.extinction_time) out.frames.emplace_back(tb, Configuration(model.dim));
        }
    }
    out.final_state = out.extinct ? Configuration(model.dim) : snapshot();
    if (cfg.record_frames) out.frames.emplace_back(cfg.T, out.final_state);

    Event horizon;
    horizon.kind = Event::Kind::Horizon;
    horizon.time = cfg.T;
    horizon.after = out.final_state;
    out.events.push_back(std::move(horizon));
    return out;
}

PopulationStats population_stats(const Trajectory& traj) {
    // the population size is piecewise constant and only changes at branch
    // events, so the running supremum is over the initial state and every
    // post-event state
    PopulationStats st;
    double sup = static_cast<double>(traj.initial_state.size());
    for (const auto& ev : traj.events) sup = std::max(sup, static_cast<double>(ev.after.size()));
    st.final_size = static_cast<double>(traj.final_state.size());
    st.sup_size = sup;
    st.sup_size_sq = sup * sup;
    st.extinct = traj.extinct;
    st.extinction_time = traj.extinction_time;
    return st;
}

}  // namespace branchsim
