#include "pgrad/distributed.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "pgrad/parallel.hpp"
#include "pgrad/rng.hpp"

namespace pgrad {

std::uint64_t round_seed(std::uint64_t master_seed, std::uint32_t round_index) {
  return derive_seed(master_seed, round_index);
}

std::uint64_t worker_seed(std::uint64_t master_seed, std::uint32_t round_index,
                          std::uint32_t worker_id) {
  return sample_seed(round_seed(master_seed, round_index), worker_id);
}

WorkerRound worker_compute(const ReplicaState& replica, const Objective& obj, EstimatorKind mode,
                           double sigma, std::uint32_t worker_id) {
  require_dim(replica.x, obj.dim(), "replica parameters");
  WorkerRound msg;
  msg.round_index = replica.round_index;
  msg.worker_id = worker_id;
  msg.seed = worker_seed(replica.master_seed, replica.round_index, worker_id);
  const Vector e = regenerate_sample(msg.seed, obj.dim(), sigma, distribution_for(mode));

  const std::span<const double> x = replica.x;
  Vector point(x.size());
  auto eval_at = [&](double sign) {
    for (std::size_t i = 0; i < x.size(); ++i) point[i] = x[i] + sign * e[i];
    return obj.eval(point);
  };

  switch (mode) {
    case EstimatorKind::GP:
    case EstimatorKind::GP_Baseline:
      msg.payload = {eval_at(1.0)};
      break;
    case EstimatorKind::GP_AS:
    case EstimatorKind::SPSA: {
      const double plus = eval_at(1.0);
      msg.payload = {plus, eval_at(-1.0)};
      break;
    }
    case EstimatorKind::DD:
      if (!obj.supports(Capability::DualEvaluation)) {
        throw CapabilityError("DD protocol mode needs dual evaluation");
      }
      msg.payload = {obj.eval_dual(x, e).tangent};
      break;
  }
  return msg;
}

Vector reconstruct_gradient(const ReplicaState& replica, const Objective& obj,
                            std::span<const WorkerRound> messages, EstimatorKind mode,
                            double sigma, std::size_t workers, MessagePolicy policy) {
  require_dim(replica.x, obj.dim(), "replica parameters");
  if (workers == 0) throw ArgumentError("worker count must be positive");

  std::vector<const WorkerRound*> by_worker(workers, nullptr);
  const std::size_t width = payload_width(mode);
  for (const WorkerRound& m : messages) {
    if (m.round_index != replica.round_index) {
      throw StaleRoundError("message for round " + std::to_string(m.round_index) +
                            " delivered to replica at round " +
                            std::to_string(replica.round_index));
    }
    if (m.worker_id >= workers) {
      throw ProtocolError("worker id " + std::to_string(m.worker_id) + " out of range");
    }
    if (by_worker[m.worker_id] != nullptr) {
      throw ProtocolError("duplicate message from worker " + std::to_string(m.worker_id));
    }
    if (m.payload.size() != width) {
      throw ProtocolError("payload width " + std::to_string(m.payload.size()) + " but mode " +
                          std::string(to_string(mode)) + " needs " + std::to_string(width));
    }
    by_worker[m.worker_id] = &m;
  }
  if (policy == MessagePolicy::RequireAll && messages.size() != workers) {
    throw ProtocolError("round " + std::to_string(replica.round_index) + " has " +
                        std::to_string(messages.size()) + " of " + std::to_string(workers) +
                        " messages");
  }

  const PerturbationBatch batch =
      sample_batch(obj.dim(), workers, sigma, distribution_for(mode),
                   round_seed(replica.master_seed, replica.round_index));
  const double baseline = mode == EstimatorKind::GP_Baseline ? obj.eval(replica.x) : 0.0;

  std::vector<std::size_t> ids;
  Vector weights;
  for (std::size_t w = 0; w < workers; ++w) {
    if (by_worker[w] == nullptr) continue;
    ids.push_back(w);
    weights.push_back(sample_weight(mode, by_worker[w]->payload, baseline));
  }
  return assemble_gradient(mode, batch, ids, weights);
}

ReplicaState replica_apply_round(const ReplicaState& replica, const Objective& obj,
                                 std::span<const WorkerRound> messages, EstimatorKind mode,
                                 double sigma, std::size_t workers, MessagePolicy policy) {
  ReplicaState next = replica;
  if (!messages.empty() || policy == MessagePolicy::RequireAll) {
    const Vector g = reconstruct_gradient(replica, obj, messages, mode, sigma, workers, policy);
    next.optimizer.step(next.x, g);
  }
  next.round_index = replica.round_index + 1;
  return next;
}

// ---------------------------------------------------------------------------

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in[at + b]) << (8 * b);
  return v;
}

}  // namespace

std::size_t wire_size(std::size_t payload_count) { return 9 + 8 * payload_count; }

std::vector<std::uint8_t> encode_message(const WorkerRound& m) {
  if (m.payload.size() > 255) throw ProtocolError("payload too long for the wire format");
  std::vector<std::uint8_t> out;
  out.reserve(wire_size(m.payload.size()));
  put_u32(out, m.round_index);
  put_u32(out, m.worker_id);
  out.push_back(static_cast<std::uint8_t>(m.payload.size()));
  for (double v : m.payload) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

WorkerRound decode_message(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 9) throw ProtocolError("truncated message header");
  WorkerRound m;
  m.round_index = get_u32(bytes, 0);
  m.worker_id = get_u32(bytes, 4);
  const std::size_t count = bytes[8];
  if (bytes.size() != wire_size(count)) throw ProtocolError("message length does not match count");
  m.payload.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(bytes[9 + 8 * k + b]) << (8 * b);
    }
    std::memcpy(&m.payload[k], &bits, sizeof bits);
  }
  return m;
}

bool FaultPlan::dropped(std::uint32_t round, std::uint32_t worker) const {
  const auto it = drops.find(round);
  return it != drops.end() && it->second.count(worker) > 0;
}

// ---------------------------------------------------------------------------

nlohmann::json ClusterReport::to_json() const {
  nlohmann::json j;
  j["workers"] = workers;
  j["replicas"] = replicas;
  j["dim"] = dim;
  j["mode"] = to_string(mode);
  j["sigma"] = sigma;
  j["master_seed"] = master_seed;
  j["replicas_consistent"] = replicas_consistent;
  j["gradient_bytes_per_worker"] = gradient_bytes_per_worker();
  const std::size_t payload = 8 * payload_width(mode);
  j["payload_bytes_per_worker"] = payload;
  j["compression_ratio"] =
      static_cast<double>(gradient_bytes_per_worker()) / static_cast<double>(payload);
  nlohmann::json rows = nlohmann::json::array();
  for (const RoundRecord& r : rounds) {
    rows.push_back({{"round", r.round},
                    {"loss", r.loss},
                    {"messages_received", r.messages_received},
                    {"scalars_exchanged", r.scalars_exchanged},
                    {"payload_bytes", r.payload_bytes},
                    {"wire_bytes", r.wire_bytes},
                    {"replicas_identical", r.replicas_identical}});
  }
  j["rounds"] = std::move(rows);
  j["final_x"] = final_x;
  return j;
}

ClusterReport simulate_cluster(const Objective& obj, const ClusterConfig& config) {
  if (config.workers == 0) throw ArgumentError("cluster needs at least one worker");
  const std::size_t replica_count = config.replicas == 0 ? config.workers : config.replicas;
  if (replica_count > config.workers) throw ArgumentError("more replicas than workers");
  const std::size_t dim = obj.dim();

  ReplicaState initial;
  initial.x = config.x0.empty() ? Vector(dim, 1.0) : config.x0;
  require_dim(initial.x, dim, "cluster initial point");
  initial.optimizer = config.optimizer;
  initial.master_seed = config.master_seed;
  std::vector<ReplicaState> replicas(replica_count, initial);

  ClusterReport report;
  report.workers = config.workers;
  report.replicas = replica_count;
  report.dim = dim;
  report.mode = config.mode;
  report.sigma = config.sigma;
  report.master_seed = config.master_seed;

  for (std::uint32_t r = 0; r < config.rounds; ++r) {
    RoundRecord record;
    record.round = r;
    record.loss = obj.eval(replicas[0].x);

    // Each worker runs next to replica (w mod R) and posts an encoded record.
    std::vector<std::vector<std::uint8_t>> board(config.workers);
    parallel_for(config.workers, config.exec.threads, [&](std::size_t w) {
      const auto id = static_cast<std::uint32_t>(w);
      if (config.faults.dropped(r, id)) return;
      board[w] = encode_message(
          worker_compute(replicas[w % replica_count], obj, config.mode, config.sigma, id));
    });

    std::vector<WorkerRound> received;
    for (const auto& bytes : board) {
      if (bytes.empty()) continue;
      record.wire_bytes += bytes.size();
      received.push_back(decode_message(bytes));
      record.scalars_exchanged += received.back().payload.size();
    }
    record.messages_received = received.size();
    record.payload_bytes = 8 * record.scalars_exchanged;

    const MessagePolicy policy = received.size() == config.workers ? MessagePolicy::RequireAll
                                                                  : MessagePolicy::AllowMissing;
    parallel_for(replica_count, config.exec.threads, [&](std::size_t k) {
      replicas[k] = replica_apply_round(replicas[k], obj, received, config.mode, config.sigma,
                                        config.workers, policy);
    });

    for (std::size_t k = 1; k < replica_count; ++k) {
      const bool same_bits =
          std::memcmp(replicas[k].x.data(), replicas[0].x.data(), dim * sizeof(double)) == 0;
      if (!same_bits || !(replicas[k].optimizer == replicas[0].optimizer) ||
          replicas[k].round_index != replicas[0].round_index) {
        record.replicas_identical = false;
      }
    }
    report.replicas_consistent = report.replicas_consistent && record.replicas_identical;
    report.rounds.push_back(record);
  }
  report.final_x = replicas[0].x;
  return report;
}

}  // namespace pgrad
