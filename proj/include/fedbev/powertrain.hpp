#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fedbev/common.hpp"
#include "fedbev/drivecycle.hpp"
#include "fedbev/trip_record.hpp"

namespace fedbev::powertrain {

struct VehicleParams {
  double mass = 2000.0;               // kg
  double battery_capacity = 40000.0;  // Wh
  double drag_coeff = 0.3;
  double frontal_area = 2.5;          // m^2
  double rolling_coeff = 0.01;
  double drive_efficiency = 0.9;
  double regen_efficiency = 0.6;
  double max_regen_power = 40000.0;   // W
  double aux_power = 300.0;           // W
  double max_traction_force = 6000.0; // N
  double air_density = 1.225;         // kg/m^3
  double gravity = 9.81;              // m/s^2

  void validate() const {
    require(mass > 0.0 && std::isfinite(mass), "vehicle: mass must be positive");
    require(battery_capacity > 0.0, "vehicle: battery_capacity must be positive");
    require(drag_coeff >= 0.0 && frontal_area >= 0.0 && rolling_coeff >= 0.0,
            "vehicle: drag, area and rolling coefficients must be non-negative");
    require(drive_efficiency > 0.0 && drive_efficiency <= 1.0, "vehicle: drive_efficiency must lie in (0, 1]");
    require(regen_efficiency >= 0.0 && regen_efficiency < 1.0, "vehicle: regen_efficiency must lie in [0, 1)");
    require(max_regen_power >= 0.0, "vehicle: max_regen_power must be non-negative");
    require(aux_power >= 0.0, "vehicle: aux_power must be non-negative");
    require(max_traction_force > 0.0, "vehicle: max_traction_force must be positive");
    require(air_density >= 0.0 && gravity > 0.0, "vehicle: air_density/gravity invalid");
  }
};

struct ControllerParams {
  // Calibrated for RMS tracking error below 0.5 m/s on urban cycles over
  // 2000-2500 kg and 0-10% grade.
  double kp = 8.0;
  double ki = 0.25;              // 1/s
  double v_nominal = 27.78;      // m/s, 100 km/h
  double integrator_limit = 1.0;

  void validate() const {
    require(kp > 0.0, "controller: kp must be positive");
    require(ki >= 0.0, "controller: ki must be non-negative");
    require(v_nominal > 0.0, "controller: v_nominal must be positive");
    require(integrator_limit >= 0.0, "controller: integrator_limit must be non-negative");
  }
};

struct PiOutput {
  double command = 0.0;     // normalized, in [-1, 1]
  double integrator = 0.0;  // updated integrator state
};

/// One step of the normalized PI speed controller. The integrator is frozen
/// while the command saturates and is otherwise bounded by integrator_limit/ki.
inline PiOutput pi_command(double v_ref, double v_actual, double integrator,
                           const ControllerParams& params, double dt = 1.0) {
  const double e = (v_ref - v_actual) / params.v_nominal;
  const double raw = params.kp * e + params.ki * integrator;
  const double command = std::clamp(raw, -1.0, 1.0);
  double next = integrator;
  if (raw == command) {
    next = integrator + e * dt;
    if (params.ki > 0.0) {
      const double cap = params.integrator_limit / params.ki;
      next = std::clamp(next, -cap, cap);
    }
  }
  return {command, next};
}

/// Grade, rolling and aerodynamic resistance (N) opposing forward motion.
inline double resistive_force(double v, double grade, const VehicleParams& p) {
  require(v >= 0.0, "resistive_force: speed must be non-negative");
  const double weight = p.mass * p.gravity;
  const double rolling = v > 0.0 ? p.rolling_coeff * weight * std::cos(grade) : 0.0;
  const double aero = 0.5 * p.air_density * p.drag_coeff * p.frontal_area * v * v;
  return weight * std::sin(grade) + rolling + aero;
}

/// Battery-side electrical power (W) for a mechanical power demand.
inline double electrical_power(double p_mech, const VehicleParams& p) {
  if (p_mech >= 0.0) return p_mech / p.drive_efficiency + p.aux_power;
  return std::max(p_mech * p.regen_efficiency, -p.max_regen_power) + p.aux_power;
}

struct SimStep {
  double t = 0.0;
  double v_actual = 0.0;
  double grade = 0.0;
  double p_elec = 0.0;  // W, positive = discharge
  double e_step = 0.0;  // Wh
  double soc = 0.0;
};

struct TripSimulation {
  dataset::TripRecord record;
  std::vector<SimStep> steps;
  double soc_initial = 0.0;
  double soc_final = 0.0;
  bool depleted = false;

  double total_energy() const {
    double s = 0.0;
    for (double e : record.energy) s += e;
    return s;
  }
};

/// Closed-loop trip simulation at dt = 1 s with forward Euler integration.
/// Step k drives the speed reached at the end of step k - 1 towards
/// speed_ref[k]; the vehicle starts at rest.
inline TripSimulation simulate_trip(const drivecycle::DriveCycle& cycle, const VehicleParams& vehicle,
                                    const ControllerParams& ctrl, double soc0) {
  cycle.validate();
  vehicle.validate();
  ctrl.validate();
  require(soc0 > 0.0 && soc0 <= 1.0, "simulate_trip: soc0 must lie in (0, 1]");

  const double dt = cycle.dt;
  TripSimulation sim;
  sim.soc_initial = soc0;
  auto& rec = sim.record;
  rec.trip_id = cycle.trip_id;
  rec.vehicle_id = cycle.vehicle_id;
  const std::size_t n = cycle.size();
  rec.time.reserve(n);
  rec.speed.reserve(n);
  rec.grade.reserve(n);
  rec.energy.reserve(n);
  sim.steps.reserve(n);

  double v = 0.0;
  double integrator = 0.0;
  double soc = soc0;
  for (std::size_t k = 0; k < n; ++k) {
    const double grade = cycle.grade[k];
    const auto pi = pi_command(cycle.speed_ref[k], v, integrator, ctrl, dt);
    integrator = pi.integrator;
    const double traction = pi.command * vehicle.max_traction_force;
    const double accel = (traction - resistive_force(v, grade, vehicle)) / vehicle.mass;
    v = std::max(0.0, v + accel * dt);

    const double p_mech = traction * v;
    double p_elec = electrical_power(p_mech, vehicle);
    double e_step = p_elec * dt / 3600.0;
    // Charge cannot exceed a full battery.
    if (soc - e_step / vehicle.battery_capacity > 1.0) {
      e_step = -(1.0 - soc) * vehicle.battery_capacity;
      p_elec = e_step * 3600.0 / dt;
    }
    bool depleted = false;
    if (soc - e_step / vehicle.battery_capacity <= 0.0) {
      e_step = soc * vehicle.battery_capacity;
      p_elec = e_step * 3600.0 / dt;
      depleted = true;
    }
    soc = depleted ? 0.0 : soc - e_step / vehicle.battery_capacity;

    rec.time.push_back(static_cast<double>(k) * dt);
    rec.speed.push_back(v);
    rec.grade.push_back(grade);
    rec.energy.push_back(e_step);
    sim.steps.push_back({static_cast<double>(k) * dt, v, grade, p_elec, e_step, soc});
    if (depleted) {
      sim.depleted = true;
      rec.depleted = true;
      break;
    }
  }
  sim.soc_final = soc;
  return sim;
}

/// RMS speed-tracking error (m/s).
inline double track_quality(const drivecycle::DriveCycle& cycle, const dataset::TripRecord& record) {
  require(cycle.size() == record.size(), "track_quality: cycle and record lengths differ");
  require(cycle.size() > 0, "track_quality: empty cycle");
  double acc = 0.0;
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    const double e = cycle.speed_ref[k] - record.speed[k];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(cycle.size()));
}

}  // namespace fedbev::powertrain
