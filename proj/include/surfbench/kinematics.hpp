// Leg geometry: closed-form forward kinematics, analytic Jacobian, damped
// least-squares inverse kinematics and jump-trajectory planning for a 3-DOF
// leg riding a vertical guide.
//
// Joint convention (used everywhere in this library):
//   q[0]  hip abduction about the base +x axis
//   q[1]  hip pitch, positive swings the foot forward (+x)
//   q[2]  knee pitch, same sense as hip pitch; the preferred branch is
//         knee-backward (q[2] <= 0)
// Zero configuration points the leg straight down: foot = (0, l1, -(l2+l3)).
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <vector>

#include "surfbench/errors.hpp"

namespace surfbench {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Joint angles (rad) in the convention above.
using JointConfig = Eigen::Vector3d;

// Geometric and inertial description of the leg. Lengths in m, masses in kg,
// gains in N·m/rad and N·m·s/rad.
struct LegModel {
    double l1 = 0.08;   // hip offset, along +y at zero abduction
    double l2 = 0.213;  // thigh
    double l3 = 0.213;  // shank
    double m_base = 2.0;
    double m1 = 0.6;
    double m2 = 0.5;
    double m3 = 0.2;
    Vec3 q_min{-0.8, -1.6, -2.8};
    Vec3 q_max{0.8, 1.6, 0.0};
    double foot_radius = 0.02;
    Vec3 kp{60.0, 60.0, 60.0};
    Vec3 kd{1.5, 1.5, 1.5};
    Vec3 imu_offset{0.0, 0.0, 0.02};  // foot joint -> sensor, in the shank frame

    double total_mass() const { return m_base + m1 + m2 + m3; }

    void validate() const {
        if (!(l1 > 0 && l2 > 0 && l3 > 0))
            throw ValidationError("leg link lengths must be strictly positive");
        if (!(m_base > 0 && m1 > 0 && m2 > 0 && m3 > 0))
            throw ValidationError("leg masses must be strictly positive");
        for (int i = 0; i < 3; ++i) {
            if (!(q_min[i] < q_max[i]))
                throw ValidationError("joint limit min must be below max (joint " +
                                      std::to_string(i) + ")");
            if (kp[i] < 0 || kd[i] < 0)
                throw ValidationError("kp and kd must be non-negative");
        }
        if (!(foot_radius > 0)) throw ValidationError("foot_radius must be positive");
    }
};

// One hop of the periodic foot-target profile.
struct JumpCycle {
    double period = 1.2;           // s
    double apex_height = 0.02;     // m, intended lift-off height
    double stance_fraction = 0.35; // fraction of the period spent in stance
    double stance_depth = 0.03;    // m of leg compression during crouch

    void validate() const {
        if (!(period > 0)) throw ValidationError("cycle period must be positive");
        if (!(apex_height > 0)) throw ValidationError("apex_height must be positive");
        if (!(stance_fraction > 0 && stance_fraction < 1))
            throw ValidationError("stance_fraction must lie in (0,1)");
        if (!(stance_depth > 0)) throw ValidationError("stance_depth must be positive");
    }

    // The hardware protocol uses one jump every 0.8-2 s; other periods run
    // but are worth flagging.
    std::optional<std::string> warning() const {
        if (period < 0.8 || period > 2.0) {
            std::ostringstream os;
            os << "cycle period " << period << " s outside the usual [0.8, 2.0] s band";
            return os.str();
        }
        return std::nullopt;
    }
};

inline Mat3 rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    r << 1, 0, 0, 0, c, -s, 0, s, c;
    return r;
}

inline Mat3 rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    r << c, 0, s, 0, 1, 0, -s, 0, c;
    return r;
}

// Foot center in the base frame.
inline Vec3 forward_kinematics(const LegModel& m, const JointConfig& q) {
    const double s1 = std::sin(q[1]), c1 = std::cos(q[1]);
    const double s12 = std::sin(q[1] + q[2]), c12 = std::cos(q[1] + q[2]);
    const double xp = m.l2 * s1 + m.l3 * s12;
    const double zp = -(m.l2 * c1 + m.l3 * c12);
    const double s0 = std::sin(q[0]), c0 = std::cos(q[0]);
    return {xp, c0 * m.l1 - s0 * zp, s0 * m.l1 + c0 * zp};
}

// Analytic d(foot)/dq; column i is the partial w.r.t. q[i].
inline Mat3 jacobian(const LegModel& m, const JointConfig& q) {
    const double s1 = std::sin(q[1]), c1 = std::cos(q[1]);
    const double s12 = std::sin(q[1] + q[2]), c12 = std::cos(q[1] + q[2]);
    const double xp = m.l2 * s1 + m.l3 * s12;
    const double zp = -(m.l2 * c1 + m.l3 * c12);
    const double s0 = std::sin(q[0]), c0 = std::cos(q[0]);
    Mat3 j;
    j.col(0) << 0.0, -s0 * m.l1 - c0 * zp, c0 * m.l1 - s0 * zp;
    j.col(1) << -zp, -s0 * xp, c0 * xp;
    j.col(2) << m.l3 * c12, -s0 * m.l3 * s12, c0 * m.l3 * s12;
    return j;
}

// Condition number of the Jacobian (sigma_max / sigma_min); large values flag
// proximity to the full-extension singularity.
inline double jacobian_condition(const LegModel& m, const JointConfig& q) {
    Eigen::JacobiSVD<Mat3> svd(jacobian(m, q));
    const double smin = svd.singularValues()(2);
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return svd.singularValues()(0) / smin;
}

inline JointConfig clamp_to_limits(const LegModel& m, JointConfig q) {
    for (int i = 0; i < 3; ++i) q[i] = std::clamp(q[i], m.q_min[i], m.q_max[i]);
    return q;
}

namespace detail {

// Closed-form knee-backward solutions, used to reseed the damped iteration
// when it stalls near the full-extension singular sheet. The abduction joint
// admits two branches (pitch plane below or above the hip axis); both are
// returned. Assumes the target already passed the workspace checks.
inline std::array<JointConfig, 2> analytic_ik(const LegModel& m, const Vec3& target) {
    constexpr double pi = std::numbers::pi;
    const double ryz = std::hypot(target.y(), target.z());
    const double zp_mag = std::sqrt(std::max(0.0, ryz * ryz - m.l1 * m.l1));

    std::array<JointConfig, 2> out;
    int i = 0;
    for (double zp : {-zp_mag, zp_mag}) {
        double q0 = std::atan2(target.z(), target.y()) - std::atan2(zp, m.l1);
        if (q0 > pi) q0 -= 2.0 * pi;
        if (q0 < -pi) q0 += 2.0 * pi;

        const double xp = target.x();
        const double rho2 = xp * xp + zp * zp;
        const double cos_knee =
            std::clamp((rho2 - m.l2 * m.l2 - m.l3 * m.l3) / (2.0 * m.l2 * m.l3), -1.0, 1.0);
        const double q2 = -std::acos(cos_knee);
        const double q1 = std::atan2(xp, -zp) -
                          std::atan2(m.l3 * std::sin(q2), m.l2 + m.l3 * std::cos(q2));
        out[i++] = {q0, q1, q2};
    }
    return out;
}

inline bool dls_iterate(const LegModel& m, const Vec3& target, JointConfig& q, double tol,
                        int max_iter) {
    constexpr double lambda = 1e-3;
    for (int it = 0; it < max_iter; ++it) {
        const Vec3 err = target - forward_kinematics(m, q);
        if (err.norm() <= tol) return true;
        const Mat3 j = jacobian(m, q);
        const Mat3 h = j.transpose() * j + lambda * Mat3::Identity();
        q = clamp_to_limits(m, q + h.ldlt().solve(j.transpose() * err));
    }
    return (target - forward_kinematics(m, q)).norm() <= tol;
}

}  // namespace detail

// Damped least-squares Newton iteration: q <- q + (J^T J + lambda I)^-1 J^T e,
// clamped into joint limits each iteration. The damping keeps the update
// bounded through the full-extension singularity; if the iteration from
// q_init stalls (which happens when the target sits on that singular sheet),
// it restarts once from the closed-form knee-backward seed.
//
// Throws Unreachable when the target lies outside the workspace (checked
// analytically against the shoulder sphere) or the iteration fails to reach
// `tol` within `max_iter`.
inline JointConfig inverse_kinematics(const LegModel& m, const Vec3& target,
                                      const JointConfig& q_init, double tol = 1e-9,
                                      int max_iter = 200) {
    if (!(tol > 0)) throw ValidationError("ik tolerance must be positive");
    if (max_iter < 1) throw ValidationError("ik max_iter must be >= 1");

    // Workspace check after abduction decomposition: the hip-pitch joint lives
    // on a circle of radius l1 about the x axis, so the planar distance from
    // shoulder to target is sqrt(|target|^2 - l1^2).
    const double ryz = std::hypot(target.y(), target.z());
    if (ryz < m.l1) {
        throw Unreachable("target inside the hip-offset cylinder; no abduction solution");
    }
    const double planar = std::sqrt(std::max(0.0, target.squaredNorm() - m.l1 * m.l1));
    if (planar > m.l2 + m.l3 + 1e-12)
        throw Unreachable("target beyond full leg extension");
    if (planar < std::abs(m.l2 - m.l3) - 1e-12)
        throw Unreachable("target inside the inner workspace boundary");

    JointConfig q = clamp_to_limits(m, q_init);
    // Preferred branch is knee-backward; mirror a knee-forward seed when the
    // mirrored angle is admissible.
    if (q[2] > 0 && -q[2] >= m.q_min[2]) q[2] = -q[2];

    if (detail::dls_iterate(m, target, q, tol, max_iter)) return q;

    for (const JointConfig& seed : detail::analytic_ik(m, target)) {
        q = clamp_to_limits(m, seed);
        if (detail::dls_iterate(m, target, q, tol, max_iter)) return q;
    }

    const double final_err = (target - forward_kinematics(m, q)).norm();
    std::ostringstream os;
    os << "ik did not converge: residual " << final_err << " m after " << max_iter
       << " iterations";
    throw Unreachable(os.str());
}

// Joint-velocity command consistent with a foot-space velocity, using the
// same damped pseudo-inverse as the IK step.
inline Vec3 joint_velocity_for(const LegModel& m, const JointConfig& q, const Vec3& foot_vel) {
    constexpr double lambda = 1e-3;
    const Mat3 j = jacobian(m, q);
    const Mat3 h = j.transpose() * j + lambda * Mat3::Identity();
    return h.ldlt().solve(j.transpose() * foot_vel);
}

struct FootTarget {
    Vec3 pos;  // base frame, m
    Vec3 vel;  // m/s
};

// Resting foot height below the base used by the trajectory and as the
// initial configuration of simulated episodes (15% crouch off full extension).
inline double nominal_foot_height(const LegModel& m) { return -0.85 * (m.l2 + m.l3); }

// Ratio of commanded push-off speed to the ballistic lift-off speed for the
// requested apex; tuned on the default leg so the PD-tracked hop reaches the
// vicinity of apex_height on a stiff floor.
constexpr double kPushGain = 1.2;

// Shortest leg length admitted by the knee limit; bounds how far the foot
// target may compress.
inline double min_leg_length(const LegModel& m) {
    const double knee = std::max(std::abs(m.q_min[2]), std::abs(m.q_max[2]));
    const double c = std::cos(knee);
    return std::sqrt(std::max(0.0, m.l2 * m.l2 + m.l3 * m.l3 + 2.0 * m.l2 * m.l3 * c));
}

namespace detail {

// Cubic smoothstep segment from (0,a) to (tau,b): C^1 with zero end velocity.
inline void smoothstep(double a, double b, double t, double tau, double& pos, double& vel) {
    const double u = std::clamp(t / tau, 0.0, 1.0);
    pos = a + (b - a) * (3.0 * u * u - 2.0 * u * u * u);
    vel = (b - a) * 6.0 * u * (1.0 - u) / tau;
}

}  // namespace detail

// One period of the periodic vertical foot-target profile:
//   crouch by stance_depth, push through to an extension overshoot sized for
//   the requested apex, retract to nominal early in flight, then hold.
// Horizontal components stay constant at (0, l1). C^1 throughout, and the
// profile starts and ends at the nominal hold value, so repetition is C^0
// exact across the period boundary.
inline std::vector<FootTarget> plan_jump_trajectory(const LegModel& m, const JumpCycle& cycle,
                                                    double dt) {
    cycle.validate();
    if (!(dt > 0)) throw ValidationError("trajectory dt must be positive");
    if (!(dt < cycle.period / 20.0))
        throw ValidationError("trajectory dt must be below period/20");

    const double z_nom = nominal_foot_height(m);
    const double max_compression = -z_nom - min_leg_length(m);
    if (cycle.stance_depth >= max_compression) {
        std::ostringstream os;
        os << "stance_depth " << cycle.stance_depth << " m exceeds the available leg compression "
           << max_compression << " m";
        throw InvalidCycle(os.str());
    }

    const double t_stance = cycle.stance_fraction * cycle.period;
    const double t_retract = 0.25 * (cycle.period - t_stance);

    // Peak smoothstep rate is 1.5*travel/duration; size the push so the
    // commanded extension rate matches the lift-off speed for the requested
    // apex, shortening the push phase when the leg would otherwise run out of
    // travel. The gain absorbs imperfect PD tracking during stance.
    const double v_liftoff = kPushGain * std::sqrt(2.0 * 9.81 * cycle.apex_height);
    const double max_extension =
        std::max(0.0, 0.98 * (m.l2 + m.l3) + z_nom);  // below full stretch
    const double travel_max = cycle.stance_depth + max_extension;
    const double t_push = std::min(0.45 * t_stance, 1.5 * travel_max / v_liftoff);
    if (t_push < 10.0 * dt) {
        std::ostringstream os;
        os << "apex_height " << cycle.apex_height
           << " m needs a push phase shorter than 10 timesteps; lower it or "
              "shorten dt";
        throw InvalidCycle(os.str());
    }
    const double t_crouch = t_stance - t_push;
    const double travel = v_liftoff * t_push / 1.5;
    const double overshoot = std::max(0.0, travel - cycle.stance_depth);

    const auto n = static_cast<std::size_t>(std::llround(cycle.period / dt));
    std::vector<FootTarget> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        double z = z_nom, dz = 0.0;
        if (t < t_crouch) {
            detail::smoothstep(z_nom, z_nom + cycle.stance_depth, t, t_crouch, z, dz);
        } else if (t < t_stance) {
            detail::smoothstep(z_nom + cycle.stance_depth, z_nom - overshoot, t - t_crouch,
                               t_push, z, dz);
        } else if (t < t_stance + t_retract) {
            detail::smoothstep(z_nom - overshoot, z_nom, t - t_stance, t_retract, z, dz);
        }
        out.push_back({Vec3(0.0, m.l1, z), Vec3(0.0, 0.0, dz)});
    }
    return out;
}

}  // namespace surfbench
