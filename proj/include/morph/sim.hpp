#pragma once

#include "morph/json_file.hpp"
#include "morph/motion.hpp"

#include <Eigen/Core>

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace morph {

/// Simulator settings. Gains are per joint: `pd_kp`/`pd_kd` apply to every
/// actuated joint unless `gain_overrides` names it.
struct SimConfig {
  double dt = 1.0 / 30.0;  ///< control step, s
  int substeps = 16;
  double gravity = 9.81;   ///< magnitude, acting along -Z
  double contact_stiffness = 2e4;
  double contact_damping = 500.0;
  double friction_coeff = 0.9;
  double friction_damping = 5000.0;  ///< viscous stick coefficient, N s/m
  double pd_kp = 200.0;
  double pd_kd = 20.0;
  double torque_limit = 150.0;
  double armature = 0.01;  ///< rotor inertia on every actuated DOF, kg m^2
  bool contact = true;
  std::map<std::string, std::pair<double, double>> gain_overrides;

  /// Defaults tuned for the default humanoid (stiff support joints).
  static SimConfig humanoid_defaults();

  void validate() const;
  double substep() const { return dt / substeps; }
  double kp(const Skeleton& skeleton, int joint) const;
  double kd(const Skeleton& skeleton, int joint) const;

  Json to_json() const;
  /// Reads keys under `base` (missing keys keep the humanoid defaults).
  static SimConfig from_json(const JsonFile& file, const std::string& base);
};

/// Generalised state of the floating-base character. Index 0 of the
/// rotation and angular-velocity arrays is the root (world frame); every
/// other joint stores its rotation relative to its parent and its angular
/// velocity relative to the parent, expressed in the parent frame.
struct SimCharacterState {
  Vec3 root_pos = Vec3::Zero();
  Vec3 root_lin_vel = Vec3::Zero();
  std::vector<Quat> joint_rot;
  std::vector<Vec3> joint_ang_vel;
  std::vector<Vec3> last_torques;  ///< applied PD torques, parent frame

  const Quat& root_rot() const { return joint_rot.front(); }
  const Vec3& root_ang_vel() const { return joint_ang_vel.front(); }
  Pose pose() const { return {root_pos, joint_rot}; }
  bool all_finite() const;
};

/// Residual PD targets: one exponential-map offset per joint. The root
/// entry is part of the layout but the root is unactuated.
struct Action {
  std::vector<Vec3> offsets;
};

/// Absolute PD targets: the reference pose's local rotations composed with
/// the action offsets (target_j = exp(offset_j) * ref_j). Offsets are
/// clamped to [-pi, pi] per component.
std::vector<Quat> pd_targets(const Pose& reference, const Action& action);

/// Reference state initialisation from frame `start_frame`.
SimCharacterState reset_to_pose(const Skeleton& skeleton, const MotionSequence& seq,
                                int start_frame);
SimCharacterState reset_to_pose(const Skeleton& skeleton, const MotionSequence& seq,
                                const MotionDerivatives& derivs, int start_frame);

struct StepInfo {
  double max_penetration = 0.0;  ///< deepest contact point, m
  int solver_passes = 0;
};

/// Deterministic articulated-body integrator: lumped joint masses, sphere
/// rotational inertia, implicit PD and penalty contacts with Coulomb-capped
/// friction. Instances own scratch buffers and are not thread-safe; use one
/// per worker.
class Simulator {
 public:
  Simulator(const Skeleton& skeleton, SimConfig config);

  const Skeleton& skeleton() const { return skeleton_; }
  const SimConfig& config() const { return config_; }
  int dofs() const { return ndof_; }

  /// Advances one control step (config.substeps physics substeps).
  /// `targets` holds one absolute local rotation per joint (root ignored).
  /// Throws SimulationDiverged on a non-finite state.
  SimCharacterState step(const SimCharacterState& state, std::span<const Quat> targets,
                         StepInfo* info = nullptr);

  /// World joint positions and linear velocities of a state.
  void joint_kinematics(const SimCharacterState& state, std::vector<Vec3>& positions,
                        std::vector<Vec3>& velocities);

  double kinetic_energy(const SimCharacterState& state);
  double potential_energy(const SimCharacterState& state);
  Vec3 linear_momentum(const SimCharacterState& state);

 private:
  struct Block {
    int dof;  ///< first generalised-velocity index of the 3-wide block
    Mat3 m;
  };
  struct Contact {
    int body;
    Vec3 point;
    double depth;
    std::vector<Block> jac;
    bool active = true;
    bool sliding = false;
    Vec3 slide_force = Vec3::Zero();
  };

  void kinematics(const SimCharacterState& s);
  void point_jacobian(int body, const Vec3& point, std::vector<Block>& out) const;
  Vec3 apply(const std::vector<Block>& jac, const Eigen::VectorXd& u) const;
  void add_jtj(Eigen::MatrixXd& m, const std::vector<Block>& jac, const Mat3& weight) const;
  void add_jt(Eigen::VectorXd& v, const std::vector<Block>& jac, const Vec3& f) const;
  void pack(const SimCharacterState& s, Eigen::VectorXd& u) const;
  void build_mass_matrix(Eigen::MatrixXd& m) const;
  void substep(SimCharacterState& s, std::span<const Quat> targets, StepInfo* info);

  Skeleton skeleton_;
  SimConfig config_;
  int n_ = 0;
  int ndof_ = 0;
  std::vector<std::vector<int>> chains_;  ///< body -> itself and ancestors
  std::vector<double> kp_, kd_, sphere_inertia_;

  // scratch, refreshed by kinematics()
  std::vector<Vec3> x_, xdot_, omega_, acc_bias_, alpha_bias_;
  std::vector<Mat3> rot_, a_;
};

SimCharacterState step(const Skeleton& skeleton, const SimCharacterState& state,
                       std::span<const Quat> targets, const SimConfig& config);

/// True iff the MPJPE between the simulated pose and `reference` exceeds
/// `threshold_m`.
bool check_termination(const Skeleton& skeleton, const Pose& reference,
                       const SimCharacterState& state, double threshold_m = 0.5);

} // namespace morph
