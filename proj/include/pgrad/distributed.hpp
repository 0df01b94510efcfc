#pragma once

// In-process simulation of seed-sharing parallel SGD.
//
// Worker w in round r draws its perturbation from
//   worker_seed(master, r, w) = derive_seed(derive_seed(master, r), w)
// which is exactly sample n = w of sample_batch(..., derive_seed(master, r)).
// Workers publish only scalar payloads; every replica regenerates all
// perturbations from seeds and rebuilds the same gradient the local estimator
// would compute, then applies one optimizer step.
//
// Wire record (little-endian): u32 round, u32 worker_id, u8 count, count x f64.
// Seeds are never transmitted.

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pgrad/estimators.hpp"
#include "pgrad/objective.hpp"
#include "pgrad/optimizer.hpp"

namespace pgrad {

struct WorkerRound {
  std::uint32_t round_index = 0;
  std::uint32_t worker_id = 0;
  std::uint64_t seed = 0;  // local bookkeeping only; not on the wire
  Vector payload;
};

struct ReplicaState {
  Vector x;
  OptimizerState optimizer = OptimizerState::sgd(0.0);
  std::uint64_t master_seed = 0;
  std::uint32_t round_index = 0;

  friend bool operator==(const ReplicaState&, const ReplicaState&) = default;
};

std::uint64_t round_seed(std::uint64_t master_seed, std::uint32_t round_index);
std::uint64_t worker_seed(std::uint64_t master_seed, std::uint32_t round_index,
                          std::uint32_t worker_id);

/// Evaluates worker `worker_id`'s perturbation at the replica's parameters.
/// Payload: GP/GP_Baseline f(x+e); GP_AS/SPSA f(x+e), f(x-e); DD D_e f(x).
WorkerRound worker_compute(const ReplicaState& replica, const Objective& obj, EstimatorKind mode,
                           double sigma, std::uint32_t worker_id);

enum class MessagePolicy {
  RequireAll,    // every worker id in [0, S) exactly once
  AllowMissing,  // drops tolerated; normalization uses the received count
};

/// Rebuilds the gradient estimate from scalar messages. Throws ProtocolError on
/// duplicate/out-of-range/missing ids or bad payload width, StaleRoundError on
/// a round mismatch. Messages may arrive in any order.
Vector reconstruct_gradient(const ReplicaState& replica, const Objective& obj,
                            std::span<const WorkerRound> messages, EstimatorKind mode,
                            double sigma, std::size_t workers,
                            MessagePolicy policy = MessagePolicy::RequireAll);

/// reconstruct_gradient + one optimizer step; advances round_index.
/// With AllowMissing and no messages at all, only the round advances.
ReplicaState replica_apply_round(const ReplicaState& replica, const Objective& obj,
                                 std::span<const WorkerRound> messages, EstimatorKind mode,
                                 double sigma, std::size_t workers,
                                 MessagePolicy policy = MessagePolicy::RequireAll);

std::size_t wire_size(std::size_t payload_count);
std::vector<std::uint8_t> encode_message(const WorkerRound& message);
/// Throws ProtocolError on truncated or oversized records.
WorkerRound decode_message(std::span<const std::uint8_t> bytes);

/// Messages to drop, by round.
struct FaultPlan {
  std::map<std::uint32_t, std::set<std::uint32_t>> drops;

  bool dropped(std::uint32_t round, std::uint32_t worker) const;
  void drop(std::uint32_t round, std::uint32_t worker) { drops[round].insert(worker); }
};

struct ClusterConfig {
  std::size_t workers = 16;
  /// Replicas actually simulated (each one rebuilds every round). 0 means one per worker.
  std::size_t replicas = 0;
  std::size_t rounds = 50;
  EstimatorKind mode = EstimatorKind::GP;
  double sigma = 0.1;
  OptimizerState optimizer = OptimizerState::sgd(0.1);
  std::uint64_t master_seed = 0;
  Vector x0;  // defaults to all ones when empty
  FaultPlan faults;
  ExecutionOptions exec;
};

struct RoundRecord {
  std::uint32_t round = 0;
  double loss = 0.0;  // f at replica 0's parameters before the update
  std::size_t messages_received = 0;
  std::size_t scalars_exchanged = 0;
  std::size_t payload_bytes = 0;
  std::size_t wire_bytes = 0;
  bool replicas_identical = true;
};

struct ClusterReport {
  std::size_t workers = 0;
  std::size_t replicas = 0;
  std::size_t dim = 0;
  EstimatorKind mode{};
  double sigma = 0.0;
  std::uint64_t master_seed = 0;
  std::vector<RoundRecord> rounds;
  bool replicas_consistent = true;
  Vector final_x;

  /// Bytes a worker would send per round shipping its full gradient (8 D).
  std::size_t gradient_bytes_per_worker() const { return 8 * dim; }
  nlohmann::json to_json() const;
};

/// Throws ArgumentError when workers == 0 or replicas > workers.
ClusterReport simulate_cluster(const Objective& obj, const ClusterConfig& config);

}  // namespace pgrad
