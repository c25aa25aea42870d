#include "morph/sim.hpp"

#include "morph/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

namespace morph {

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

} // namespace

// ---------------------------------------------------------------------------
// SimConfig

SimConfig SimConfig::humanoid_defaults() {
  SimConfig c;
  c.contact_stiffness = 5e5;
  for (const char* name : {"l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle"}) {
    c.gain_overrides[name] = {2000.0, 1000.0};
  }
  c.gain_overrides["spine"] = {800.0, 400.0};
  c.gain_overrides["l_elbow"] = {150.0, 75.0};
  c.gain_overrides["r_elbow"] = {150.0, 75.0};
  c.gain_overrides["l_shoulder"] = {200.0, 100.0};
  c.gain_overrides["r_shoulder"] = {200.0, 100.0};
  return c;
}

void SimConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InputError(std::string("sim config: ") + what + " must be > 0");
    }
  };
  auto non_negative = [](double v, const char* what) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InputError(std::string("sim config: ") + what + " must be >= 0");
    }
  };
  positive(dt, "dt");
  if (substeps < 1) throw InputError("sim config: substeps must be >= 1");
  non_negative(gravity, "gravity");
  non_negative(contact_stiffness, "contact_stiffness");
  non_negative(contact_damping, "contact_damping");
  non_negative(friction_coeff, "friction_coeff");
  non_negative(friction_damping, "friction_damping");
  non_negative(pd_kp, "pd_kp");
  non_negative(pd_kd, "pd_kd");
  positive(torque_limit, "torque_limit");
  non_negative(armature, "armature");
  for (const auto& [name, g] : gain_overrides) {
    if (!(g.first >= 0.0) || !(g.second >= 0.0)) {
      throw InputError("sim config: gains for '" + name + "' must be >= 0");
    }
  }
}

double SimConfig::kp(const Skeleton& skeleton, int joint) const {
  auto it = gain_overrides.find(skeleton.joint(joint).name);
  return it == gain_overrides.end() ? pd_kp : it->second.first;
}

double SimConfig::kd(const Skeleton& skeleton, int joint) const {
  auto it = gain_overrides.find(skeleton.joint(joint).name);
  return it == gain_overrides.end() ? pd_kd : it->second.second;
}

Json SimConfig::to_json() const {
  Json overrides = Json::object();
  for (const auto& [name, g] : gain_overrides) overrides[name] = {g.first, g.second};
  return {{"dt", dt},
          {"substeps", substeps},
          {"gravity", gravity},
          {"contact_stiffness", contact_stiffness},
          {"contact_damping", contact_damping},
          {"friction_coeff", friction_coeff},
          {"friction_damping", friction_damping},
          {"pd_kp", pd_kp},
          {"pd_kd", pd_kd},
          {"torque_limit", torque_limit},
          {"armature", armature},
          {"contact", contact},
          {"gain_overrides", overrides}};
}

SimConfig SimConfig::from_json(const JsonFile& f, const std::string& base) {
  SimConfig c = humanoid_defaults();
  auto num = [&](const char* key, double& field) {
    const std::string ptr = base + "/" + key;
    if (f.has(ptr)) field = f.number(ptr);
  };
  num("dt", c.dt);
  if (f.has(base + "/substeps")) c.substeps = static_cast<int>(f.integer(base + "/substeps"));
  num("gravity", c.gravity);
  num("contact_stiffness", c.contact_stiffness);
  num("contact_damping", c.contact_damping);
  num("friction_coeff", c.friction_coeff);
  num("friction_damping", c.friction_damping);
  num("pd_kp", c.pd_kp);
  num("pd_kd", c.pd_kd);
  num("torque_limit", c.torque_limit);
  num("armature", c.armature);
  if (f.has(base + "/contact")) {
    const Json& v = f.at(base + "/contact");
    if (!v.is_boolean()) f.fail(base + "/contact", "expected a boolean");
    c.contact = v.get<bool>();
  }
  if (f.has(base + "/gain_overrides")) {
    const Json& o = f.at(base + "/gain_overrides");
    if (!o.is_object()) f.fail(base + "/gain_overrides", "expected an object");
    c.gain_overrides.clear();
    for (const auto& [name, _] : o.items()) {
      const auto g = f.numbers(base + "/gain_overrides/" + name, 2);
      c.gain_overrides[name] = {g[0], g[1]};
    }
  }
  try {
    c.validate();
  } catch (const InputError& e) {
    f.fail(base, e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

bool SimCharacterState::all_finite() const {
  if (!root_pos.allFinite() || !root_lin_vel.allFinite()) return false;
  for (const Quat& q : joint_rot) {
    if (!q.coeffs().allFinite()) return false;
  }
  for (const Vec3& v : joint_ang_vel) {
    if (!v.allFinite()) return false;
  }
  for (const Vec3& v : last_torques) {
    if (!v.allFinite()) return false;
  }
  return true;
}

std::vector<Quat> pd_targets(const Pose& reference, const Action& action) {
  const size_t n = reference.joint_rot.size();
  if (action.offsets.size() != n) {
    throw StructuralError("pd_targets: action has " + std::to_string(action.offsets.size()) +
                          " offsets for " + std::to_string(n) + " joints");
  }
  std::vector<Quat> targets(n);
  for (size_t j = 0; j < n; ++j) {
    if (!action.offsets[j].allFinite()) throw InputError("pd_targets: non-finite action");
    const Vec3 a = action.offsets[j].cwiseMax(-kPi).cwiseMin(kPi);
    targets[j] = quat_exp(a) * reference.joint_rot[j];
  }
  return targets;
}

SimCharacterState reset_to_pose(const Skeleton& skeleton, const MotionSequence& seq,
                                const MotionDerivatives& derivs, int start_frame) {
  if (start_frame < 0 || start_frame >= seq.length()) {
    throw InputError("reset_to_pose: start frame " + std::to_string(start_frame) +
                     " outside [0, " + std::to_string(seq.length()) + ")");
  }
  const auto l = static_cast<size_t>(start_frame);
  const Pose& p = seq.frames[l];
  check_pose(skeleton, p);
  SimCharacterState s;
  s.root_pos = p.root_pos;
  s.joint_rot = p.joint_rot;
  s.root_lin_vel = derivs.lin_vel[l][0];
  s.joint_ang_vel = derivs.ang_vel[l];
  s.last_torques.assign(p.joint_rot.size(), Vec3::Zero());
  return s;
}

SimCharacterState reset_to_pose(const Skeleton& skeleton, const MotionSequence& seq,
                                int start_frame) {
  return reset_to_pose(skeleton, seq, derive_velocities(skeleton, seq), start_frame);
}

// ---------------------------------------------------------------------------
// Simulator

Simulator::Simulator(const Skeleton& skeleton, SimConfig config)
    : skeleton_(skeleton), config_(std::move(config)) {
  config_.validate();
  n_ = skeleton_.num_joints();
  ndof_ = 3 + 3 * n_;
  chains_.resize(static_cast<size_t>(n_));
  for (int b = 0; b < n_; ++b) {
    for (int k = b; k >= 0; k = skeleton_.parent(k)) {
      chains_[static_cast<size_t>(b)].push_back(k);
    }
  }
  for (int j = 0; j < n_; ++j) {
    kp_.push_back(j == 0 ? 0.0 : config_.kp(skeleton_, j));
    kd_.push_back(j == 0 ? 0.0 : config_.kd(skeleton_, j));
    const Joint& jj = skeleton_.joint(j);
    sphere_inertia_.push_back(0.4 * jj.mass * jj.collision_radius * jj.collision_radius);
  }
  const auto un = static_cast<size_t>(n_);
  x_.resize(un);
  xdot_.resize(un);
  omega_.resize(un);
  acc_bias_.resize(un);
  alpha_bias_.resize(un);
  rot_.resize(un);
  a_.resize(un);
}

void Simulator::kinematics(const SimCharacterState& s) {
  x_[0] = s.root_pos;
  rot_[0] = s.joint_rot[0].toRotationMatrix();
  a_[0] = Mat3::Identity();
  omega_[0] = s.joint_ang_vel[0];
  xdot_[0] = s.root_lin_vel;
  acc_bias_[0] = Vec3::Zero();
  alpha_bias_[0] = Vec3::Zero();
  for (int j = 1; j < n_; ++j) {
    const auto uj = static_cast<size_t>(j);
    const auto p = static_cast<size_t>(skeleton_.parent(j));
    a_[uj] = rot_[p];
    rot_[uj] = rot_[p] * s.joint_rot[uj].toRotationMatrix();
    const Vec3 r = rot_[p] * skeleton_.joint(j).offset;
    x_[uj] = x_[p] + r;
    const Vec3 w_rel = a_[uj] * s.joint_ang_vel[uj];
    omega_[uj] = omega_[p] + w_rel;
    xdot_[uj] = xdot_[p] + omega_[p].cross(r);
    alpha_bias_[uj] = alpha_bias_[p] + omega_[p].cross(w_rel);
    acc_bias_[uj] = acc_bias_[p] + alpha_bias_[p].cross(r) +
                    omega_[p].cross(omega_[p].cross(r));
  }
}

void Simulator::point_jacobian(int body, const Vec3& point, std::vector<Block>& out) const {
  out.clear();
  out.push_back({0, Mat3::Identity()});
  for (int k : chains_[static_cast<size_t>(body)]) {
    const auto uk = static_cast<size_t>(k);
    out.push_back({3 + 3 * k, -skew(point - x_[uk]) * a_[uk]});
  }
}

Vec3 Simulator::apply(const std::vector<Block>& jac, const Eigen::VectorXd& u) const {
  Vec3 v = Vec3::Zero();
  for (const Block& b : jac) v += b.m * u.segment<3>(b.dof);
  return v;
}

void Simulator::add_jtj(Eigen::MatrixXd& m, const std::vector<Block>& jac,
                        const Mat3& weight) const {
  for (const Block& p : jac) {
    const Mat3 pw = p.m.transpose() * weight;
    for (const Block& q : jac) {
      m.block<3, 3>(p.dof, q.dof) += pw * q.m;
    }
  }
}

void Simulator::add_jt(Eigen::VectorXd& v, const std::vector<Block>& jac,
                       const Vec3& f) const {
  for (const Block& b : jac) v.segment<3>(b.dof) += b.m.transpose() * f;
}

void Simulator::pack(const SimCharacterState& s, Eigen::VectorXd& u) const {
  u.resize(ndof_);
  u.segment<3>(0) = s.root_lin_vel;
  for (int j = 0; j < n_; ++j) {
    u.segment<3>(3 + 3 * j) = s.joint_ang_vel[static_cast<size_t>(j)];
  }
}

void Simulator::build_mass_matrix(Eigen::MatrixXd& m) const {
  m.setZero(ndof_, ndof_);
  std::vector<Block> jac;
  for (int b = 0; b < n_; ++b) {
    const auto ub = static_cast<size_t>(b);
    point_jacobian(b, x_[ub], jac);
    add_jtj(m, jac, skeleton_.joint(b).mass * Mat3::Identity());
    if (sphere_inertia_[ub] > 0.0) {
      std::vector<Block> jw;
      for (int k : chains_[ub]) jw.push_back({3 + 3 * k, a_[static_cast<size_t>(k)]});
      add_jtj(m, jw, sphere_inertia_[ub] * Mat3::Identity());
    }
  }
  for (int i = 6; i < ndof_; ++i) m(i, i) += config_.armature;
}

void Simulator::substep(SimCharacterState& s, std::span<const Quat> targets,
                        StepInfo* info) {
  const double h = config_.substep();
  const double g = config_.gravity;
  kinematics(s);

  Eigen::MatrixXd mass;
  build_mass_matrix(mass);
  Eigen::VectorXd u;
  pack(s, u);

  // gravity minus velocity-product (Coriolis/centrifugal) terms
  Eigen::VectorXd force = Eigen::VectorXd::Zero(ndof_);
  std::vector<Block> jac;
  Vec3 momentum = Vec3::Zero();
  for (int b = 0; b < n_; ++b) {
    const auto ub = static_cast<size_t>(b);
    const double m = skeleton_.joint(b).mass;
    momentum += m * xdot_[ub];
    point_jacobian(b, x_[ub], jac);
    add_jt(force, jac, m * (Vec3(0, 0, -g) - acc_bias_[ub]));
    if (sphere_inertia_[ub] > 0.0) {
      for (int k : chains_[ub]) {
        force.segment<3>(3 + 3 * k) -=
            a_[static_cast<size_t>(k)].transpose() * (sphere_inertia_[ub] * alpha_bias_[ub]);
      }
    }
  }

  // PD errors in the parent frame
  std::vector<Vec3> err(static_cast<size_t>(n_), Vec3::Zero());
  for (int j = 1; j < n_; ++j) {
    const auto uj = static_cast<size_t>(j);
    err[uj] = quat_log(targets[uj] * s.joint_rot[uj].conjugate());
  }
  // 0 = implicit PD, otherwise the fixed clamped torque value
  std::vector<double> clamped(static_cast<size_t>(ndof_), 0.0);
  std::vector<bool> is_clamped(static_cast<size_t>(ndof_), false);

  std::vector<Contact> contacts;
  if (config_.contact) {
    for (int b = 0; b < n_; ++b) {
      const auto ub = static_cast<size_t>(b);
      const Joint& jt = skeleton_.joint(b);
      const double depth = jt.collision_radius - x_[ub].z();
      if (depth > 0.0) {
        Contact c{b, x_[ub] - Vec3(0, 0, jt.collision_radius), depth, {}};
        point_jacobian(b, c.point, c.jac);
        contacts.push_back(std::move(c));
      }
      for (const Vec3& o : jt.contact_points) {
        const Vec3 y = x_[ub] + rot_[ub] * o;
        if (y.z() < 0.0) {
          Contact c{b, y, -y.z(), {}};
          point_jacobian(b, y, c.jac);
          contacts.push_back(std::move(c));
        }
      }
    }
  }
  if (info) {
    for (const Contact& c : contacts) info->max_penetration = std::max(info->max_penetration, c.depth);
  }

  const double k = config_.contact_stiffness;
  const double cn = config_.contact_damping + h * k;
  const double ct = config_.friction_damping;
  const double mu = config_.friction_coeff;
  const double limit = config_.torque_limit;

  Eigen::VectorXd u_next(ndof_);
  Eigen::MatrixXd system;
  Eigen::VectorXd rhs;
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  constexpr int kMaxPasses = 6;
  int pass = 0;
  for (; pass < kMaxPasses; ++pass) {
    system = mass;
    rhs = mass * u + h * force;
    for (int j = 1; j < n_; ++j) {
      for (int i = 0; i < 3; ++i) {
        const int idx = 3 + 3 * j + i;
        const auto ui = static_cast<size_t>(idx);
        if (is_clamped[ui]) {
          rhs(idx) += h * clamped[ui];
        } else {
          const auto uj = static_cast<size_t>(j);
          system(idx, idx) += h * kd_[uj] + h * h * kp_[uj];
          rhs(idx) += h * kp_[uj] * err[uj][i];
        }
      }
    }
    for (const Contact& c : contacts) {
      if (!c.active) continue;
      const double tan = c.sliding ? 0.0 : h * ct;
      add_jtj(system, c.jac, Vec3(tan, tan, h * cn).asDiagonal());
      Vec3 f0(0, 0, k * c.depth);
      if (c.sliding) f0 += c.slide_force;
      add_jt(rhs, c.jac, h * f0);
    }
    ldlt.compute(system);
    u_next = ldlt.solve(rhs);

    bool changed = false;
    for (int j = 1; j < n_; ++j) {
      const auto uj = static_cast<size_t>(j);
      for (int i = 0; i < 3; ++i) {
        const auto ui = static_cast<size_t>(3 + 3 * j + i);
        if (is_clamped[ui]) continue;
        const double w = u_next(3 + 3 * j + i);
        const double tau = kp_[uj] * (err[uj][i] - h * w) - kd_[uj] * w;
        if (std::abs(tau) > limit) {
          is_clamped[ui] = true;
          clamped[ui] = std::copysign(limit, tau);
          changed = true;
        }
      }
    }
    for (Contact& c : contacts) {
      if (!c.active) continue;
      const Vec3 v = apply(c.jac, u_next);
      const double fn = k * c.depth - cn * v.z();
      if (fn < 0.0) {
        c.active = false;
        changed = true;
        continue;
      }
      const Vec3 vt(v.x(), v.y(), 0.0);
      if (!c.sliding && ct * vt.norm() > mu * fn) {
        c.sliding = true;
        c.slide_force = -mu * fn * vt.normalized();
        changed = true;
      }
    }
    if (!changed) break;
  }
  if (info) info->solver_passes += pass + 1;

  // applied forces for the momentum balance and torque bookkeeping
  Vec3 external(0, 0, -g * skeleton_.total_mass());
  for (const Contact& c : contacts) {
    if (!c.active) continue;
    const Vec3 v = apply(c.jac, u_next);
    Vec3 f(0, 0, std::max(0.0, k * c.depth - cn * v.z()));
    if (c.sliding) {
      f += c.slide_force;
    } else {
      f.x() -= ct * v.x();
      f.y() -= ct * v.y();
    }
    external += f;
  }
  for (int j = 1; j < n_; ++j) {
    const auto uj = static_cast<size_t>(j);
    for (int i = 0; i < 3; ++i) {
      const auto ui = static_cast<size_t>(3 + 3 * j + i);
      const double w = u_next(3 + 3 * j + i);
      s.last_torques[uj][i] =
          is_clamped[ui] ? clamped[ui] : kp_[uj] * (err[uj][i] - h * w) - kd_[uj] * w;
    }
  }

  // semi-implicit Euler position update
  s.root_lin_vel = u_next.segment<3>(0);
  for (int j = 0; j < n_; ++j) {
    s.joint_ang_vel[static_cast<size_t>(j)] = u_next.segment<3>(3 + 3 * j);
  }
  s.root_pos += h * s.root_lin_vel;
  for (int j = 0; j < n_; ++j) {
    const auto uj = static_cast<size_t>(j);
    Quat q = quat_exp(h * s.joint_ang_vel[uj]) * s.joint_rot[uj];
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    s.joint_rot[uj] = q;
  }

  // Newton's law for the centre of mass holds exactly: correct the root
  // velocity so total momentum equals the pre-step value plus the impulse.
  const Vec3 target = momentum + h * external;
  kinematics(s);
  Vec3 after = Vec3::Zero();
  for (int b = 0; b < n_; ++b) {
    after += skeleton_.joint(b).mass * xdot_[static_cast<size_t>(b)];
  }
  s.root_lin_vel += (target - after) / skeleton_.total_mass();

  if (!s.all_finite()) {
    throw SimulationDiverged("simulation produced a non-finite state");
  }
}

SimCharacterState Simulator::step(const SimCharacterState& state,
                                  std::span<const Quat> targets, StepInfo* info) {
  if (static_cast<int>(state.joint_rot.size()) != n_ ||
      static_cast<int>(state.joint_ang_vel.size()) != n_ ||
      static_cast<int>(targets.size()) != n_) {
    throw StructuralError("sim step: state/targets do not match the skeleton");
  }
  if (!state.all_finite()) {
    throw SimulationDiverged("sim step: non-finite input state");
  }
  SimCharacterState s = state;
  if (static_cast<int>(s.last_torques.size()) != n_) {
    s.last_torques.assign(static_cast<size_t>(n_), Vec3::Zero());
  }
  if (info) *info = {};
  for (int i = 0; i < config_.substeps; ++i) substep(s, targets, info);
  return s;
}

void Simulator::joint_kinematics(const SimCharacterState& state, std::vector<Vec3>& positions,
                                 std::vector<Vec3>& velocities) {
  kinematics(state);
  positions = x_;
  velocities = xdot_;
}

double Simulator::kinetic_energy(const SimCharacterState& state) {
  kinematics(state);
  Eigen::MatrixXd m;
  build_mass_matrix(m);
  Eigen::VectorXd u;
  pack(state, u);
  return 0.5 * u.dot(m * u);
}

double Simulator::potential_energy(const SimCharacterState& state) {
  kinematics(state);
  double e = 0.0;
  for (int b = 0; b < n_; ++b) {
    e += skeleton_.joint(b).mass * config_.gravity * x_[static_cast<size_t>(b)].z();
  }
  return e;
}

Vec3 Simulator::linear_momentum(const SimCharacterState& state) {
  kinematics(state);
  Vec3 p = Vec3::Zero();
  for (int b = 0; b < n_; ++b) p += skeleton_.joint(b).mass * xdot_[static_cast<size_t>(b)];
  return p;
}

SimCharacterState step(const Skeleton& skeleton, const SimCharacterState& state,
                       std::span<const Quat> targets, const SimConfig& config) {
  Simulator sim(skeleton, config);
  return sim.step(state, targets);
}

bool check_termination(const Skeleton& skeleton, const Pose& reference,
                       const SimCharacterState& state, double threshold_m) {
  if (!(threshold_m > 0.0)) {
    throw InputError("termination threshold must be > 0");
  }
  return pose_mpjpe(skeleton, reference, state.pose()) > threshold_m;
}

} // namespace morph
