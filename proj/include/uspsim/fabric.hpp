// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "uspsim/bytes.hpp"

namespace uspsim {

using WorkerId = int;

// Ordered set of workers participating in one collective scope.
struct ProcessGroup {
  std::vector<WorkerId> members;

  int size() const { return static_cast<int>(members.size()); }
  // Position of `rank` within the group, -1 if absent.
  int position_of(WorkerId rank) const;
  // Canonical "a,b,c" form used as the log key.
  std::string key() const;
};

ProcessGroup make_world_group(int n_workers);

// One sender-side accounting record. `bytes` is what `rank` put on the wire
// for this (op, group, round); self-addressed payloads are excluded.
struct TrafficEntry {
  std::string op;     // "all_to_all" | "send" | "barrier"
  std::string group;  // group key, or "f->t" for point-to-point links
  int round = 0;
  int rank = 0;
  std::uint64_t bytes = 0;
  std::uint64_t msgs = 0;
};

class TrafficLog {
 public:
  void add(TrafficEntry e) { entries_.push_back(std::move(e)); }
  const std::vector<TrafficEntry>& entries() const { return entries_; }

  std::uint64_t total_bytes() const;
  std::uint64_t bytes_for(const std::string& op, int rank) const;
  std::uint64_t messages_for(const std::string& op, int rank) const;
  // Distinct round values logged for (op, rank).
  int round_count(const std::string& op, int rank) const;
  int entry_count(const std::string& op, int rank) const;

  // Entries in canonical (op, group, round, rank) order.
  nlohmann::json to_json() const;

 private:
  std::vector<TrafficEntry> entries_;
};

// Logical schedule events recorded by protocol code; the cost model prices
// these, the fabric only orders them. `seq` is a global issue order.
enum class EventKind {
  kSendIssue,
  kRecvIssue,
  kTransferComplete,
  kComputeBegin,
  kComputeEnd,
  kMerge,
};

const char* event_kind_name(EventKind k);

struct TimelineEvent {
  std::uint64_t seq = 0;
  int rank = 0;
  EventKind kind = EventKind::kComputeBegin;
  std::string tag;
  int round = 0;
};

class Timeline {
 public:
  void add(TimelineEvent e) { events_.push_back(std::move(e)); }
  const std::vector<TimelineEvent>& events() const { return events_; }
  std::vector<TimelineEvent> for_rank(int rank) const;
  int count(int rank, EventKind kind) const;
  nlohmann::json to_json() const;

 private:
  std::vector<TimelineEvent> events_;
};

struct RunOptions {
  enum class Scheduler {
    kDeterministic,  // one worker runs at a time, round-robin at block points
    kConcurrent,     // free-running threads
  };
  Scheduler scheduler = Scheduler::kDeterministic;
  // Deadlocks are detected exactly (no runnable worker left); the budget
  // additionally bounds total scheduling steps so livelocks terminate.
  std::uint64_t step_budget = 1'000'000;
};

class FabricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No worker can make progress: reports every stalled operation.
class DeadlockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A worker program threw; carries the failing rank.
class WorkerFailure : public std::runtime_error {
 public:
  WorkerFailure(int rank, const std::string& what)
      : std::runtime_error("worker " + std::to_string(rank) + " failed: " + what), rank_(rank) {}
  int rank() const { return rank_; }

 private:
  int rank_;
};

class Fabric;

// Handle for an asynchronous receive; completed by WorkerContext::wait.
struct PendingRecv {
  std::uint64_t id = 0;
};

// Per-worker view of the fabric, passed to worker programs.
class WorkerContext {
 public:
  int rank() const { return rank_; }
  int world_size() const;

  // Buffered (eager) send: enqueues on the from->to FIFO link and returns.
  // `round` labels the traffic entry; -1 means per-link message index.
  void send(WorkerId to, Bytes payload, int round = -1);
  // Blocking receive of the oldest undelivered message on from->rank.
  Bytes recv(WorkerId from);
  // Issue a receive without blocking; wait() blocks until the matching
  // message arrived and returns it.
  PendingRecv recv_async(WorkerId from);
  Bytes wait(PendingRecv handle);

  // Each member passes one buffer per member (slot j addressed to member j);
  // returns the buffers addressed to this rank, in member order. The
  // self-slot passes through unchanged and is not counted as traffic.
  std::vector<Bytes> all_to_all(const ProcessGroup& group, std::vector<Bytes> payloads);

  void barrier(const ProcessGroup& group);

  // Record a protocol-schedule event.
  void mark(EventKind kind, const std::string& tag, int round = 0);

 private:
  friend class Fabric;
  WorkerContext(Fabric* fabric, int rank) : fabric_(fabric), rank_(rank) {}
  Fabric* fabric_;
  int rank_;
};

struct RunReport {
  TrafficLog traffic;
  Timeline timeline;
  std::uint64_t scheduler_steps = 0;
};

using WorkerProgram = std::function<void(WorkerContext&)>;

// Executes `program` on n workers to completion and returns the accounting.
// Deterministic mode yields bit-identical results, traffic, and timelines
// across repeated runs. Throws DeadlockError / WorkerFailure on stalls and
// worker exceptions.
RunReport run_protocol(int n_workers, const WorkerProgram& program, const RunOptions& opts = {});

}  // namespace uspsim
