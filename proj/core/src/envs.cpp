#include "trifle/envs.hpp"

#include <array>
#include <stdexcept>

namespace trifle {
namespace {

// Directions indexed as the first four taxi actions: N, S, E, W.
constexpr std::array<std::int32_t, 4> kRowDelta{-1, 1, 0, 0};
constexpr std::array<std::int32_t, 4> kColDelta{0, 0, 1, -1};

// Vertical walls as (row, left column) pairs: a wall between (r, c) and
// (r, c + 1) blocks east from the left cell and west from the right cell.
constexpr std::array<std::pair<std::int32_t, std::int32_t>, 6> kTaxiWalls{{
    {0, 1}, {1, 1}, {3, 0}, {3, 2}, {4, 0}, {4, 2},
}};

bool taxi_wall_blocks(std::int32_t row, std::int32_t col, std::int32_t dir) {
  if (dir != 2 && dir != 3) return false;
  const std::int32_t left = dir == 2 ? col : col - 1;
  for (const auto& [wr, wc] : kTaxiWalls) {
    if (wr == row && wc == left) return true;
  }
  return false;
}

}  // namespace

TaxiEnv::TaxiEnv(double slip, std::int32_t max_steps, bool depot_starts)
    : slip_(slip), max_steps_(max_steps), depot_starts_(depot_starts) {
  if (slip < 0.0 || slip >= 1.0) throw std::invalid_argument("TaxiEnv: slip must be in [0, 1)");
  if (max_steps < 1) throw std::invalid_argument("TaxiEnv: max_steps must be positive");
}

std::int32_t TaxiEnv::encode(std::int32_t taxi_cell, std::int32_t passenger,
                             std::int32_t destination) {
  if (taxi_cell < 0 || taxi_cell >= 25 || passenger < 0 || passenger > kInTaxi ||
      destination < 0 || destination >= 25) {
    throw std::invalid_argument("TaxiEnv::encode: component out of range");
  }
  return (taxi_cell * 26 + passenger) * 25 + destination;
}

void TaxiEnv::decode(std::int32_t state, std::int32_t& taxi_cell, std::int32_t& passenger,
                     std::int32_t& destination) {
  if (state < 0 || state >= 25 * 26 * 25) {
    throw std::invalid_argument("TaxiEnv::decode: state out of range");
  }
  destination = state % 25;
  state /= 25;
  passenger = state % 26;
  taxi_cell = state / 26;
}

std::int32_t TaxiEnv::reset(Rng& rng) {
  const auto taxi = static_cast<std::int32_t>(rng.next_below(25));
  if (depot_starts_) {
    // The four classic corner depots of the 5x5 grid.
    static constexpr std::array<std::int32_t, 4> kDepots{0, 4, 20, 23};
    const auto p = static_cast<std::int32_t>(rng.next_below(4));
    auto d = static_cast<std::int32_t>(rng.next_below(3));
    if (d >= p) ++d;
    return reset_to(encode(taxi, kDepots[p], kDepots[d]));
  }
  const auto passenger = static_cast<std::int32_t>(rng.next_below(25));
  auto dest = static_cast<std::int32_t>(rng.next_below(24));
  if (dest >= passenger) ++dest;  // destination is uniform over the other 24 cells
  return reset_to(encode(taxi, passenger, dest));
}

std::int32_t TaxiEnv::reset_to(std::int32_t state) {
  std::int32_t taxi, passenger, dest;
  decode(state, taxi, passenger, dest);
  state_ = state;
  steps_ = 0;
  done_ = false;
  delivered_ = false;
  return state_;
}

StepResult TaxiEnv::step(std::int32_t action, Rng& rng) {
  if (done_) throw std::logic_error("TaxiEnv::step: episode is over");
  if (action < 0 || action >= n_actions()) {
    throw std::invalid_argument("TaxiEnv::step: bad action");
  }
  std::int32_t taxi, passenger, dest;
  decode(state_, taxi, passenger, dest);
  const std::int32_t row = taxi / 5;
  const std::int32_t col = taxi % 5;

  double reward = -1.0;
  if (action < 4) {
    std::int32_t dir = action;
    if (slip_ > 0.0 && rng.next_double() < slip_) {
      // Uniform over the three unintended directions.
      const auto k = static_cast<std::int32_t>(rng.next_below(3));
      dir = k >= dir ? k + 1 : k;
    }
    const std::int32_t nr = row + kRowDelta[dir];
    const std::int32_t nc = col + kColDelta[dir];
    if (nr < 0 || nr >= 5 || nc < 0 || nc >= 5) {
      reward -= 5.0;  // off the grid: stay put
    } else if (taxi_wall_blocks(row, col, dir)) {
      reward -= 4.0;  // wall: stay put
    } else {
      taxi = nr * 5 + nc;
    }
  } else if (action == 4) {
    if (passenger < kInTaxi && passenger == taxi) {
      passenger = kInTaxi;
    } else {
      reward -= 10.0;
    }
  } else {
    if (passenger == kInTaxi && taxi == dest) {
      passenger = dest;
      reward += 20.0;
      delivered_ = true;
    } else {
      reward -= 10.0;  // wrong cell or no passenger; the passenger stays put
    }
  }

  state_ = encode(taxi, passenger, dest);
  ++steps_;
  done_ = delivered_ || steps_ >= max_steps_;
  return {state_, reward, delivered_, done_};
}

LakeEnv::LakeEnv(double slip, std::int32_t max_steps) : slip_(slip), max_steps_(max_steps) {
  if (slip < 0.0 || slip >= 1.0) throw std::invalid_argument("LakeEnv: slip must be in [0, 1)");
  if (max_steps < 1) throw std::invalid_argument("LakeEnv: max_steps must be positive");
}

bool LakeEnv::is_hole(std::int32_t cell) {
  return cell == 5 || cell == 7 || cell == 11 || cell == 12;
}

std::int32_t LakeEnv::reset(Rng&) {
  state_ = 0;
  steps_ = 0;
  done_ = false;
  reached_goal_ = false;
  return state_;
}

StepResult LakeEnv::step(std::int32_t action, Rng& rng) {
  if (done_) throw std::logic_error("LakeEnv::step: episode is over");
  if (action < 0 || action >= n_actions()) {
    throw std::invalid_argument("LakeEnv::step: bad action");
  }
  // Actions: 0 left, 1 down, 2 right, 3 up. Perpendicular pairs share parity.
  std::int32_t dir = action;
  if (slip_ > 0.0 && rng.next_double() < slip_) {
    const bool first = rng.next_double() < 0.5;
    // Perpendiculars of {left, right} are {up, down} and vice versa.
    if (action == 0 || action == 2) {
      dir = first ? 3 : 1;
    } else {
      dir = first ? 0 : 2;
    }
  }
  const std::int32_t row = state_ / 4;
  const std::int32_t col = state_ % 4;
  static constexpr std::array<std::int32_t, 4> dr{0, 1, 0, -1};
  static constexpr std::array<std::int32_t, 4> dc{-1, 0, 1, 0};
  const std::int32_t nr = row + dr[dir];
  const std::int32_t nc = col + dc[dir];
  if (nr >= 0 && nr < 4 && nc >= 0 && nc < 4) state_ = nr * 4 + nc;

  ++steps_;
  double reward = 0.0;
  bool terminal = false;
  if (state_ == kGoal) {
    reward = 1.0;
    terminal = true;
    reached_goal_ = true;
  } else if (is_hole(state_)) {
    terminal = true;
  }
  done_ = terminal || steps_ >= max_steps_;
  return {state_, reward, terminal, done_};
}

}  // namespace trifle
