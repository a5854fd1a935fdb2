// Time-step simulation of the leg on its vertical guide hopping on a
// compliant surface. Generalized coordinates are x = (z_base, q0, q1, q2):
// one prismatic DOF for the frictionless guide plus the three joints.
//
// The links are modeled as point masses at their midpoints. The equations of
// motion are assembled from the point-mass Jacobians:
//   M(q) xdd + c(q, xd) + g(q) = B tau + J_foot^T f_contact
// with the Coriolis force built from Christoffel symbols of M. Integration is
// semi-implicit Euler, which keeps the stiff contact spring stable at the
// default 0.2 ms step and preserves energy to well under 0.1% over seconds in
// the conservative configuration.
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "surfbench/errors.hpp"
#include "surfbench/kinematics.hpp"
#include "surfbench/rng.hpp"

namespace surfbench {

constexpr double kGravity = 9.81;         // m/s^2
constexpr double kDefaultSimDt = 2e-4;    // s
constexpr double kFrictionVelEps = 1e-3;  // m/s, Coulomb regularization

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// One digital-twin surface: Coulomb friction plus a normal spring-damper.
struct SurfaceParams {
    double mu = 0.6;     // friction coefficient
    double k_n = 3e4;    // normal stiffness, N/m
    double c_n = 100.0;  // normal damping, N·s/m
    std::string name;

    void validate() const {
        if (!(mu >= 0)) throw ValidationError("surface mu must be >= 0 (" + name + ")");
        if (!(k_n > 0)) throw ValidationError("surface k_n must be > 0 (" + name + ")");
        if (!(c_n >= 0)) throw ValidationError("surface c_n must be >= 0 (" + name + ")");
    }
};

// Workbench default surfaces standing in for the four classes. The values are
// desk-scale defaults, not measurements: carpet is soft and lossy, rubber
// grippy and of medium stiffness, the two tiles equally stiff but with very
// different friction. Smooth tile's mu must sit low enough that the foot
// actually skates during stance (above ~0.2 the stiction cap holds the foot
// and the two tiles become nearly indistinguishable to the IMU).
inline std::vector<SurfaceParams> default_surface_presets() {
    return {
        {0.90, 6.0e3, 250.0, "carpet"},
        {1.10, 3.0e4, 120.0, "rubber"},
        {0.10, 1.2e5, 40.0, "tile"},
        {1.00, 1.2e5, 40.0, "rough_tile"},
    };
}

struct LegState {
    double z_base = 0.0;   // vertical guide position, m
    double dz_base = 0.0;  // m/s
    Vec3 q = Vec3::Zero();
    Vec3 dq = Vec3::Zero();
    double t = 0.0;

    Vec4 coords() const { return {z_base, q[0], q[1], q[2]}; }
    Vec4 rates() const { return {dz_base, dq[0], dq[1], dq[2]}; }

    bool finite() const {
        return std::isfinite(z_base) && std::isfinite(dz_base) && q.allFinite() &&
               dq.allFinite() && std::isfinite(t);
    }
};

struct JointCommand {
    Vec3 q_des = Vec3::Zero();
    Vec3 dq_des = Vec3::Zero();
};

struct NoiseSpec {
    double sigma_acc = 0.05;    // m/s^2
    double sigma_gyr = 0.005;   // rad/s
    double acc_saturation = 160.0;  // m/s^2, per axis
    double gyr_saturation = 35.0;   // rad/s, per axis

    static NoiseSpec off() { return {0.0, 0.0, 160.0, 35.0}; }
};

// One IMU reading: specific force and angular velocity in the sensor frame.
struct ImuSample {
    double t = 0.0;
    Vec3 acc = Vec3::Zero();
    Vec3 gyr = Vec3::Zero();
};

using ImuTrace = std::vector<ImuSample>;

namespace detail {

// Positions and Jacobians (w.r.t. x = (z_base, q)) of the four point masses
// and  the foot. Index order: base, link1 mid, link2 mid, link3 mid, foot.
struct Chain {
    std::array<Vec3, 5> p;
    std::array<Mat34, 5> J;
};

inline Chain chain_kinematics(const LegModel& m, double z_base, const Vec3& q) {
    const double s0 = std::sin(q[0]), c0 = std::cos(q[0]);
    const double s1 = std::sin(q[1]), c1 = std::cos(q[1]);
    const double s12 = std::sin(q[1] + q[2]), c12 = std::cos(q[1] + q[2]);

    Chain ch;
    for (auto& j : ch.J) j.setZero();

    // Pitch-plane point (xp, zp) hanging at hip offset y0, rotated by the
    // abduction angle and lifted by z_base.
    auto place = [&](int idx, double y0, double xp, double zp, double dxp1, double dzp1,
                     double dxp2, double dzp2) {
        ch.p[idx] = {xp, c0 * y0 - s0 * zp, z_base + s0 * y0 + c0 * zp};
        Mat34& J = ch.J[idx];
        J.col(0) << 0, 0, 1;
        J.col(1) << 0, -s0 * y0 - c0 * zp, c0 * y0 - s0 * zp;
        J.col(2) << dxp1, -s0 * dzp1, c0 * dzp1;
        J.col(3) << dxp2, -s0 * dzp2, c0 * dzp2;
    };

    ch.p[0] = {0, 0, z_base};
    ch.J[0].col(0) << 0, 0, 1;

    place(1, 0.5 * m.l1, 0, 0, 0, 0, 0, 0);
    {
        const double a = 0.5 * m.l2;
        place(2, m.l1, a * s1, -a * c1, a * c1, a * s1, 0, 0);
    }
    {
        const double b = 0.5 * m.l3;
        place(3, m.l1, m.l2 * s1 + b * s12, -(m.l2 * c1 + b * c12), m.l2 * c1 + b * c12,
              m.l2 * s1 + b * s12, b * c12, b * s12);
    }
    place(4, m.l1, m.l2 * s1 + m.l3 * s12, -(m.l2 * c1 + m.l3 * c12),
          m.l2 * c1 + m.l3 * c12, m.l2 * s1 + m.l3 * s12, m.l3 * c12, m.l3 * s12);
    return ch;
}

inline std::array<double, 4> point_masses(const LegModel& m) {
    return {m.m_base, m.m1, m.m2, m.m3};
}

inline Mat4 mass_matrix_from_chain(const LegModel& m, const Chain& ch) {
    Mat4 M = Mat4::Zero();
    const auto masses = point_masses(m);
    for (int i = 0; i < 4; ++i) M.noalias() += masses[i] * ch.J[i].transpose() * ch.J[i];
    return M;
}

}  // namespace detail

// Joint-space mass matrix of the point-mass model; exposed so tests can do
// independent energy accounting.
inline Mat4 mass_matrix(const LegModel& m, const LegState& s) {
    return detail::mass_matrix_from_chain(m, detail::chain_kinematics(m, s.z_base, s.q));
}

// World positions of the four point masses (base, link midpoints), for
// potential-energy accounting.
inline std::array<Vec3, 4> mass_point_positions(const LegModel& m, const LegState& s) {
    const auto ch = detail::chain_kinematics(m, s.z_base, s.q);
    return {ch.p[0], ch.p[1], ch.p[2], ch.p[3]};
}

// Foot center in world coordinates.
inline Vec3 foot_position_world(const LegModel& m, const LegState& s) {
    return detail::chain_kinematics(m, s.z_base, s.q).p[4];
}

namespace detail {

// Coriolis/centrifugal generalized force via Christoffel symbols,
//   c_i = sum_jk (dM_ij/dx_k - 0.5 dM_jk/dx_i) v_j v_k,
// with dM/dq taken by central differences (M does not depend on z_base).
inline Vec4 coriolis_force(const LegModel& m, const Vec3& q, const Vec4& v) {
    constexpr double h = 1e-6;
    std::array<Mat4, 4> dM;
    dM[0].setZero();
    for (int k = 0; k < 3; ++k) {
        Vec3 qp = q, qm = q;
        qp[k] += h;
        qm[k] -= h;
        const Mat4 Mp = mass_matrix_from_chain(m, chain_kinematics(m, 0.0, qp));
        const Mat4 Mm = mass_matrix_from_chain(m, chain_kinematics(m, 0.0, qm));
        dM[k + 1] = (Mp - Mm) / (2.0 * h);
    }
    Vec4 c = Vec4::Zero();
    for (int i = 0; i < 4; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 4; ++k)
                acc += (dM[k](i, j) - 0.5 * dM[i](j, k)) * v[j] * v[k];
        c[i] = acc;
    }
    return c;
}

}  // namespace detail

// Contact force at the foot for the current kinematic state. The ground plane
// sits at z = 0; penetration is measured at the foot center. Normal force is
// a unilateral spring-damper, tangential force a velocity-regularized Coulomb
// law bounded by mu * f_n.
//
// max_tangential_force caps the friction magnitude; the stepper passes the
// impulse that would cancel the slip within one step (a stiction cap). Near
// zero slip the tanh law behaves like a viscous damper of slope mu*f_n/v_eps,
// far stiffer than the mechanism at the default timestep, and integrating
// that explicitly without the cap chatters instead of sticking.
inline Vec3 contact_force(const SurfaceParams& surf, const Vec3& foot_pos,
                          const Vec3& foot_vel,
                          double max_tangential_force = std::numeric_limits<double>::infinity()) {
    const double depth = -foot_pos.z();
    if (depth <= 0.0) return Vec3::Zero();
    const double fn = std::max(0.0, surf.k_n * depth + surf.c_n * (-foot_vel.z()));
    if (fn == 0.0) return Vec3::Zero();
    Vec3 f(0.0, 0.0, fn);
    const Eigen::Vector2d vt(foot_vel.x(), foot_vel.y());
    const double speed = vt.norm();
    if (speed > 1e-12 && surf.mu > 0.0) {
        const double mag = std::min(surf.mu * fn * std::tanh(speed / kFrictionVelEps),
                                    max_tangential_force);
        f.head<2>() = -(mag / speed) * vt;
    }
    return f;
}

// Advance the state by one semi-implicit Euler step under PD joint control and
// compliant contact; returns the new state and the contact force applied.
inline std::pair<LegState, Vec3> step(const LegModel& m, const LegState& s,
                                      const JointCommand& cmd, const SurfaceParams& surf,
                                      double dt) {
    if (!(dt > 0.0 && dt <= 2e-3))
        throw ValidationError("dynamics step requires dt in (0, 2e-3]");

    const auto ch = detail::chain_kinematics(m, s.z_base, s.q);
    const auto masses = detail::point_masses(m);
    const Vec4 v = s.rates();

    const Mat4 M = detail::mass_matrix_from_chain(m, ch);

    Vec4 rhs = Vec4::Zero();
    for (int i = 0; i < 4; ++i) rhs.noalias() -= masses[i] * kGravity * ch.J[i].row(2).transpose();

    const Vec3 tau = m.kp.cwiseProduct(cmd.q_des - s.q) + m.kd.cwiseProduct(cmd.dq_des - s.dq);
    rhs.tail<3>() += tau;

    const Vec3 foot_vel = ch.J[4] * v;

    // Stiction cap: the largest tangential force that cancels (rather than
    // reverses) the slip in one step, from the operational-space inverse
    // inertia along the slip direction.
    double max_ft = std::numeric_limits<double>::infinity();
    const Eigen::Vector2d vt(foot_vel.x(), foot_vel.y());
    const double slip = vt.norm();
    if (slip > 1e-12 && surf.mu > 0.0 && -ch.p[4].z() > 0.0) {
        const Eigen::LDLT<Mat4> mass_ldlt(M);
        const Mat34& jf = ch.J[4];
        const Mat3 inv_inertia = jf * mass_ldlt.solve(jf.transpose());
        const Eigen::Vector2d dir = vt / slip;
        const double compliance = dir.dot(inv_inertia.topLeftCorner<2, 2>() * dir);
        if (compliance > 0.0) max_ft = slip / (dt * compliance);
    }
    const Vec3 f = contact_force(surf, ch.p[4], foot_vel, max_ft);
    rhs.noalias() += ch.J[4].transpose() * f;

    rhs -= detail::coriolis_force(m, s.q, v);

    const Vec4 accel = M.ldlt().solve(rhs);
    const Vec4 v_new = v + dt * accel;

    LegState out = s;
    out.dz_base = v_new[0];
    out.dq = v_new.tail<3>();
    out.z_base += dt * v_new[0];
    out.q += dt * v_new.tail<3>();
    out.t += dt;

    if (!out.finite())
        throw NumericalBlowup("non-finite state after dynamics step at t=" +
                              std::to_string(s.t));
    return {out, f};
}

// Sensor pose: the IMU rides the shank, offset from the foot joint. Returns
// world position, world-from-sensor rotation and world angular velocity.
struct SensorPose {
    Vec3 position;
    Mat3 rotation;
    Vec3 omega_world;
};

inline SensorPose sensor_pose(const LegModel& m, const LegState& s) {
    const Mat3 R = rot_x(s.q[0]) * rot_y(-(s.q[1] + s.q[2]));
    const Vec3 foot = foot_position_world(m, s);
    const Vec3 y_ab = rot_x(s.q[0]) * Vec3::UnitY();
    const Vec3 omega = s.dq[0] * Vec3::UnitX() - (s.dq[1] + s.dq[2]) * y_ab;
    return {foot + R * m.imu_offset, R, omega};
}

// Three consecutive sensor positions plus the middle pose; the second central
// difference of position gives the linear acceleration the accelerometer sees.
struct SensorFrames {
    Vec3 p_prev, p_cur, p_next;
    Mat3 rotation;     // at the middle frame
    Vec3 omega_world;  // at the middle frame
    double dt = kDefaultSimDt;
    double t = 0.0;
};

inline ImuSample synthesize_imu(const SensorFrames& fr, const Vec3& gravity,
                                const NoiseSpec& noise, std::mt19937_64& rng) {
    const Vec3 acc_world = (fr.p_next - 2.0 * fr.p_cur + fr.p_prev) / (fr.dt * fr.dt);
    ImuSample out;
    out.t = fr.t;
    out.acc = fr.rotation.transpose() * (acc_world - gravity);
    out.gyr = fr.rotation.transpose() * fr.omega_world;

    std::normal_distribution<double> gauss(0.0, 1.0);
    double n[6];
    for (double& x : n) x = gauss(rng);
    if (noise.sigma_acc > 0.0) out.acc += noise.sigma_acc * Vec3(n[0], n[1], n[2]);
    if (noise.sigma_gyr > 0.0) out.gyr += noise.sigma_gyr * Vec3(n[3], n[4], n[5]);

    for (int i = 0; i < 3; ++i) {
        out.acc[i] = std::clamp(out.acc[i], -noise.acc_saturation, noise.acc_saturation);
        out.gyr[i] = std::clamp(out.gyr[i], -noise.gyr_saturation, noise.gyr_saturation);
    }
    return out;
}

// Initial configuration for an episode: foot resting exactly on the ground at
// the nominal crouch, zero rates.
inline LegState initial_state(const LegModel& m) {
    const double z_nom = nominal_foot_height(m);
    const JointConfig seed(0.0, 0.5, -1.0);
    LegState s;
    s.q = inverse_kinematics(m, Vec3(0.0, m.l1, z_nom), seed, 1e-10, 200);
    s.z_base = -z_nom;
    return s;
}

// Drive plan_jump_trajectory -> inverse_kinematics -> step for `duration`
// seconds and sample the virtual IMU at `imu_rate`. Deterministic for a fixed
// seed. Trace length is floor(duration * imu_rate); sample k carries
// timestamp k / imu_rate, k = 1..N.
inline ImuTrace simulate_episode(const LegModel& m, const SurfaceParams& surf,
                                 const JumpCycle& cycle, double duration, double imu_rate,
                                 const NoiseSpec& noise, std::uint64_t seed,
                                 double dt = kDefaultSimDt) {
    m.validate();
    surf.validate();
    cycle.validate();
    if (!(duration > cycle.period))
        throw ValidationError("episode duration must exceed the cycle period");
    if (!(imu_rate > 0)) throw ValidationError("imu_rate must be positive");
    const auto decim = static_cast<long>(std::llround(1.0 / (imu_rate * dt)));
    if (decim < 1 || std::abs(decim * imu_rate * dt - 1.0) > 1e-9)
        throw ValidationError("imu_rate must divide the simulation rate evenly");

    const auto traj = plan_jump_trajectory(m, cycle, dt);
    const auto n_traj = static_cast<long>(traj.size());
    const auto n_samples = static_cast<long>(std::floor(duration * imu_rate + 1e-9));
    const long n_steps = n_samples * decim + 1;

    auto rng = make_rng(seed, "imu-noise");
    LegState state = initial_state(m);
    JointConfig q_des = state.q;

    std::array<SensorPose, 3> ring;  // poses at steps i-2, i-1, i
    ring[0] = ring[1] = ring[2] = sensor_pose(m, state);

    ImuTrace trace;
    trace.reserve(static_cast<std::size_t>(n_samples));

    for (long i = 1; i <= n_steps; ++i) {
        const FootTarget& target = traj[static_cast<std::size_t>((i - 1) % n_traj)];
        q_des = inverse_kinematics(m, target.pos, q_des, 1e-10, 50);
        JointCommand cmd{q_des, joint_velocity_for(m, q_des, target.vel)};
        state = step(m, state, cmd, surf, dt).first;

        ring[0] = ring[1];
        ring[1] = ring[2];
        ring[2] = sensor_pose(m, state);

        if (i >= 2 && (i - 1) % decim == 0) {
            SensorFrames fr;
            fr.p_prev = ring[0].position;
            fr.p_cur = ring[1].position;
            fr.p_next = ring[2].position;
            fr.rotation = ring[1].rotation;
            fr.omega_world = ring[1].omega_world;
            fr.dt = dt;
            fr.t = static_cast<double>(i - 1) * dt;
            trace.push_back(synthesize_imu(fr, Vec3(0, 0, -kGravity), noise, rng));
        }
    }
    return trace;
}

}  // namespace surfbench
