// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#include "uspsim/fabric.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace uspsim {

int ProcessGroup::position_of(WorkerId rank) const {
  for (std::size_t i = 0; i < members.size(); ++i)
    if (members[i] == rank) return static_cast<int>(i);
  return -1;
}

std::string ProcessGroup::key() const {
  std::string k;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (i) k += ',';
    k += std::to_string(members[i]);
  }
  return k;
}

ProcessGroup make_world_group(int n_workers) {
  ProcessGroup g;
  g.members.resize(static_cast<std::size_t>(n_workers));
  for (int i = 0; i < n_workers; ++i) g.members[static_cast<std::size_t>(i)] = i;
  return g;
}

std::uint64_t TrafficLog::total_bytes() const {
  std::uint64_t t = 0;
  for (const auto& e : entries_) t += e.bytes;
  return t;
}

std::uint64_t TrafficLog::bytes_for(const std::string& op, int rank) const {
  std::uint64_t t = 0;
  for (const auto& e : entries_)
    if (e.op == op && e.rank == rank) t += e.bytes;
  return t;
}

std::uint64_t TrafficLog::messages_for(const std::string& op, int rank) const {
  std::uint64_t t = 0;
  for (const auto& e : entries_)
    if (e.op == op && e.rank == rank) t += e.msgs;
  return t;
}

int TrafficLog::round_count(const std::string& op, int rank) const {
  std::set<int> rounds;
  for (const auto& e : entries_)
    if (e.op == op && e.rank == rank) rounds.insert(e.round);
  return static_cast<int>(rounds.size());
}

int TrafficLog::entry_count(const std::string& op, int rank) const {
  int n = 0;
  for (const auto& e : entries_)
    if (e.op == op && e.rank == rank) ++n;
  return n;
}

nlohmann::json TrafficLog::to_json() const {
  std::vector<TrafficEntry> sorted = entries_;
  std::sort(sorted.begin(), sorted.end(), [](const TrafficEntry& a, const TrafficEntry& b) {
    return std::tie(a.op, a.group, a.round, a.rank) < std::tie(b.op, b.group, b.round, b.rank);
  });
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : sorted) {
    arr.push_back({{"op", e.op},
                   {"group", e.group},
                   {"round", e.round},
                   {"rank", e.rank},
                   {"bytes", e.bytes},
                   {"msgs", e.msgs}});
  }
  return arr;
}

const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::kSendIssue: return "send_issue";
    case EventKind::kRecvIssue: return "recv_issue";
    case EventKind::kTransferComplete: return "transfer_complete";
    case EventKind::kComputeBegin: return "compute_begin";
    case EventKind::kComputeEnd: return "compute_end";
    case EventKind::kMerge: return "merge";
  }
  return "?";
}

std::vector<TimelineEvent> Timeline::for_rank(int rank) const {
  std::vector<TimelineEvent> r;
  for (const auto& e : events_)
    if (e.rank == rank) r.push_back(e);
  return r;
}

int Timeline::count(int rank, EventKind kind) const {
  int n = 0;
  for (const auto& e : events_)
    if (e.rank == rank && e.kind == kind) ++n;
  return n;
}

nlohmann::json Timeline::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : events_) {
    arr.push_back({{"seq", e.seq},
                   {"rank", e.rank},
                   {"kind", event_kind_name(e.kind)},
                   {"tag", e.tag},
                   {"round", e.round}});
  }
  return arr;
}

namespace {

enum class AbortKind { kNone, kDeadlock, kBudget, kWorkerError };

// Thrown into blocked workers when the run is torn down for a reason that
// originated elsewhere (another worker failed, or a deadlock was declared).
struct RunAborted {};

}  // namespace

class Fabric {
 public:
  Fabric(int n, const RunOptions& opts) : n_(n), opts_(opts) {
    workers_.resize(static_cast<std::size_t>(n));
    links_.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
    link_msg_count_.assign(links_.size(), 0);
  }

  // ---- worker-facing operations -------------------------------------------

  void send(int rank, WorkerId to, Bytes payload, int round) {
    std::unique_lock<std::mutex> lk(mu_);
    check_alive();
    check_rank(to, "send destination");
    const std::size_t link = link_index(rank, to);
    const int msg_round = round >= 0 ? round : static_cast<int>(link_msg_count_[link]);
    link_msg_count_[link]++;
    links_[link].push_back(std::move(payload));
    if (to != rank) {  // self-messages are free and unlogged
      traffic_.add({"send", std::to_string(rank) + "->" + std::to_string(to), msg_round, rank,
                    links_[link].back().size(), 1});
    }
    cv_.notify_all();
  }

  Bytes recv(int rank, WorkerId from) {
    std::unique_lock<std::mutex> lk(mu_);
    check_alive();
    check_rank(from, "recv source");
    const std::size_t link = link_index(from, rank);
    wait_until(lk, rank, [&] { return !links_[link].empty(); },
               "recv(from=" + std::to_string(from) + ")");
    Bytes b = std::move(links_[link].front());
    links_[link].pop_front();
    return b;
  }

  PendingRecv recv_async(int rank, WorkerId from) {
    std::unique_lock<std::mutex> lk(mu_);
    check_alive();
    check_rank(from, "recv source");
    const std::uint64_t id = next_pending_id_++;
    pending_[id] = from;
    (void)rank;
    return PendingRecv{id};
  }

  Bytes wait_recv(int rank, PendingRecv handle) {
    std::unique_lock<std::mutex> lk(mu_);
    check_alive();
    auto it = pending_.find(handle.id);
    if (it == pending_.end()) throw FabricError("wait on unknown or already-completed receive");
    const int from = it->second;
    pending_.erase(it);
    const std::size_t link = link_index(from, rank);
    wait_until(lk, rank, [&] { return !links_[link].empty(); },
               "wait(recv from=" + std::to_string(from) + ")");
    Bytes b = std::move(links_[link].front());
    links_[link].pop_front();
    return b;
  }

  std::vector<Bytes> all_to_all(int rank, const ProcessGroup& group, std::vector<Bytes> payloads) {
    std::unique_lock<std::mutex> lk(mu_);
    check_alive();
    validate_group(group);
    const int w = group.size();
    const int pos = group.position_of(rank);
    if (pos < 0) throw FabricError("rank " + std::to_string(rank) + " not in group " + group.key());
    if (static_cast<int>(payloads.size()) != w) {
      throw FabricError("all_to_all: rank " + std::to_string(rank) + " passed " +
                        std::to_string(payloads.size()) + " buffers for group size " +
                        std::to_string(w));
    }
    const std::string slot_key = "a2a:" + group.key();
    const std::uint64_t seq = call_seq_slot(slot_key, rank)++;
    auto& slot = collectives_[{slot_key, seq}];
    if (slot.inputs.empty()) slot.inputs.resize(static_cast<std::size_t>(w));
    slot.inputs[static_cast<std::size_t>(pos)] = std::move(payloads);
    slot.arrived++;
    if (slot.arrived == w) {
      finish_all_to_all(group, static_cast<int>(seq), slot);
      cv_.notify_all();
    } else {
      wait_until(lk, rank, [&] { return slot.complete; },
                 "all_to_all(group=" + group.key() + ", round=" + std::to_string(seq) + ", " +
                     std::to_string(slot.arrived) + "/" + std::to_string(w) + " arrived)");
    }
    return std::move(slot.outputs[static_cast<std::size_t>(pos)]);
  }

  void barrier(int rank, const ProcessGroup& group) {
    std::unique_lock<std::mutex> lk(mu_);
    check_alive();
    validate_group(group);
    const int w = group.size();
    const int pos = group.position_of(rank);
    if (pos < 0) throw FabricError("rank " + std::to_string(rank) + " not in group " + group.key());
    const std::string slot_key = "bar:" + group.key();
    const std::uint64_t seq = call_seq_slot(slot_key, rank)++;
    auto& slot = collectives_[{slot_key, seq}];
    if (slot.inputs.empty()) slot.inputs.resize(static_cast<std::size_t>(w));
    slot.arrived++;
    if (slot.arrived == w) {
      slot.complete = true;
      slot.outputs.resize(static_cast<std::size_t>(w));
      for (WorkerId m : group.members)
        traffic_.add({"barrier", group.key(), static_cast<int>(seq), m, 0, 0});
      cv_.notify_all();
    } else {
      wait_until(lk, rank, [&] { return slot.complete; },
                 "barrier(group=" + group.key() + ", round=" + std::to_string(seq) + ", " +
                     std::to_string(slot.arrived) + "/" + std::to_string(w) + " arrived)");
    }
  }

  void mark(int rank, EventKind kind, const std::string& tag, int round) {
    std::unique_lock<std::mutex> lk(mu_);
    check_alive();
    timeline_.add({event_seq_++, rank, kind, tag, round});
  }

  int world_size() const { return n_; }

  // ---- run orchestration ---------------------------------------------------

  RunReport run(const WorkerProgram& program) {
    if (n_ == 1) {
      // Degenerate case: direct call on the current thread.
      WorkerContext ctx(this, 0);
      try {
        program(ctx);
      } catch (const RunAborted&) {
      } catch (const std::exception& e) {
        if (abort_ == AbortKind::kNone) {
          abort_ = AbortKind::kWorkerError;
          fail_rank_ = 0;
          fail_message_ = e.what();
        }
      }
      return finish_report();
    }

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_));
    for (int r = 0; r < n_; ++r) {
      threads.emplace_back([this, r, &program] { worker_main(r, program); });
    }
    for (auto& t : threads) t.join();
    return finish_report();
  }

 private:
  struct CollectiveSlot {
    int arrived = 0;
    bool complete = false;
    std::vector<std::vector<Bytes>> inputs;
    std::vector<std::vector<Bytes>> outputs;
  };

  struct WorkerState {
    bool started = false;
    bool finished = false;
    bool blocked = false;
    std::function<bool()> ready;
    std::string blocked_on;
  };

  std::size_t link_index(int from, int to) const {
    return static_cast<std::size_t>(from) * static_cast<std::size_t>(n_) +
           static_cast<std::size_t>(to);
  }

  void check_rank(int r, const char* what) const {
    if (r < 0 || r >= n_)
      throw FabricError(std::string(what) + " " + std::to_string(r) + " out of range [0," +
                        std::to_string(n_) + ")");
  }

  void validate_group(const ProcessGroup& group) const {
    if (group.members.empty()) throw FabricError("empty process group");
    std::set<WorkerId> seen;
    for (WorkerId m : group.members) {
      check_rank(m, "group member");
      if (!seen.insert(m).second)
        throw FabricError("duplicate member " + std::to_string(m) + " in group " + group.key());
    }
  }

  void check_alive() const {
    if (abort_ != AbortKind::kNone) throw RunAborted{};
  }

  void finish_all_to_all(const ProcessGroup& group, int round, CollectiveSlot& slot) {
    const int w = group.size();
    slot.outputs.assign(static_cast<std::size_t>(w), std::vector<Bytes>());
    for (int i = 0; i < w; ++i) {
      slot.outputs[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(w));
    }
    for (int j = 0; j < w; ++j) {
      for (int i = 0; i < w; ++i) {
        // What member j addressed to member i lands at i's slot j.
        slot.outputs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            std::move(slot.inputs[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]);
      }
    }
    for (int i = 0; i < w; ++i) {
      std::uint64_t bytes = 0;
      for (int j = 0; j < w; ++j) {
        if (j == i) continue;
        bytes += slot.outputs[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)].size();
      }
      traffic_.add({"all_to_all", group.key(), round, group.members[static_cast<std::size_t>(i)],
                    bytes, static_cast<std::uint64_t>(w - 1)});
    }
    slot.complete = true;
    slot.inputs.clear();
  }

  RunReport finish_report() {
    if (abort_ == AbortKind::kWorkerError) throw WorkerFailure(fail_rank_, fail_message_);
    if (abort_ == AbortKind::kDeadlock || abort_ == AbortKind::kBudget)
      throw DeadlockError(abort_message_);
    RunReport rep;
    rep.traffic = std::move(traffic_);
    rep.timeline = std::move(timeline_);
    rep.scheduler_steps = steps_;
    return rep;
  }

  // --- scheduling core ---

  void worker_main(int rank, const WorkerProgram& program) {
    {
      std::unique_lock<std::mutex> lk(mu_);
      auto& st = workers_[static_cast<std::size_t>(rank)];
      st.started = true;
      if (deterministic()) {
        // Workers start one at a time, rank order.
        cv_.wait(lk, [&] { return token_ == rank || abort_ != AbortKind::kNone; });
        if (abort_ != AbortKind::kNone) {
          st.finished = true;
          pass_token(rank);
          return;
        }
      }
    }
    WorkerContext ctx(this, rank);
    bool primary_failure = false;
    std::string what;
    try {
      program(ctx);
    } catch (const RunAborted&) {
      // torn down by someone else's failure; nothing to record
    } catch (const std::exception& e) {
      primary_failure = true;
      what = e.what();
    } catch (...) {
      primary_failure = true;
      what = "unknown exception";
    }
    std::unique_lock<std::mutex> lk(mu_);
    auto& st = workers_[static_cast<std::size_t>(rank)];
    st.finished = true;
    st.blocked = false;
    if (primary_failure && abort_ == AbortKind::kNone) {
      abort_ = AbortKind::kWorkerError;
      fail_rank_ = rank;
      fail_message_ = what;
    }
    if (deterministic()) {
      pass_token(rank);
    } else {
      maybe_declare_deadlock();  // the rest may all be blocked on this worker
    }
    cv_.notify_all();
  }

  bool deterministic() const { return opts_.scheduler == RunOptions::Scheduler::kDeterministic; }

  // Blocks the calling worker until pred() holds. In deterministic mode this
  // is the only yield point: the token moves round-robin to the next worker
  // able to make progress.
  void wait_until(std::unique_lock<std::mutex>& lk, int rank, std::function<bool()> pred,
                  std::string what) {
    if (pred()) return;
    auto& st = workers_[static_cast<std::size_t>(rank)];
    st.blocked = true;
    st.ready = pred;
    st.blocked_on = std::move(what);
    if (deterministic()) {
      pass_token(rank);
      cv_.wait(lk, [&] { return (token_ == rank && st.ready()) || abort_ != AbortKind::kNone; });
    } else {
      ++steps_;
      if (steps_ > opts_.step_budget) declare_budget_exhausted();
      maybe_declare_deadlock();
      cv_.wait(lk, [&] { return st.ready() || abort_ != AbortKind::kNone; });
    }
    st.blocked = false;
    st.ready = nullptr;
    st.blocked_on.clear();
    if (abort_ != AbortKind::kNone) throw RunAborted{};
  }

  // Deterministic mode: hand the token to the next runnable worker after
  // `from`. Declares deadlock if nobody can run while someone is blocked.
  void pass_token(int from) {
    for (int off = 1; off <= n_; ++off) {
      const int cand = (from + off) % n_;
      const auto& st = workers_[static_cast<std::size_t>(cand)];
      if (st.finished) continue;
      if (st.blocked && !st.ready()) continue;
      token_ = cand;
      ++steps_;
      if (steps_ > opts_.step_budget) {
        declare_budget_exhausted();
        return;
      }
      cv_.notify_all();
      return;
    }
    // No runnable worker. Fine if everyone is done; a deadlock otherwise.
    bool all_finished = true;
    for (const auto& st : workers_)
      if (!st.finished) all_finished = false;
    if (!all_finished && abort_ == AbortKind::kNone) {
      abort_ = AbortKind::kDeadlock;
      abort_message_ = "deadlock: " + stalled_summary();
    }
    cv_.notify_all();
  }

  void maybe_declare_deadlock() {
    if (abort_ != AbortKind::kNone) return;
    for (const auto& st : workers_) {
      if (st.finished) continue;
      if (!st.started) return;              // someone has not entered yet
      if (!st.blocked) return;              // someone is still running
      if (st.ready && st.ready()) return;   // someone is about to wake
    }
    abort_ = AbortKind::kDeadlock;
    abort_message_ = "deadlock: " + stalled_summary();
    cv_.notify_all();
  }

  void declare_budget_exhausted() {
    if (abort_ != AbortKind::kNone) return;
    abort_ = AbortKind::kBudget;
    abort_message_ = "scheduler step budget (" + std::to_string(opts_.step_budget) +
                     ") exhausted; " + stalled_summary();
    cv_.notify_all();
  }

  std::string stalled_summary() const {
    std::ostringstream os;
    bool first = true;
    for (int r = 0; r < n_; ++r) {
      const auto& st = workers_[static_cast<std::size_t>(r)];
      if (st.finished || !st.blocked) continue;
      if (!first) os << "; ";
      first = false;
      os << "rank " << r << " stalled in " << st.blocked_on;
    }
    if (first) os << "no worker blocked";
    return os.str();
  }

  const int n_;
  const RunOptions opts_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<WorkerState> workers_;
  int token_ = 0;
  std::uint64_t steps_ = 0;

  AbortKind abort_ = AbortKind::kNone;
  std::string abort_message_;
  int fail_rank_ = -1;
  std::string fail_message_;

  std::vector<std::deque<Bytes>> links_;       // [from*n + to] FIFO
  std::vector<std::uint64_t> link_msg_count_;  // messages ever sent per link

  std::map<std::pair<std::string, std::uint64_t>, CollectiveSlot> collectives_;
  std::map<std::string, std::vector<std::uint64_t>> call_seq_raw_;

  std::map<std::uint64_t, int> pending_;  // pending recv id -> source rank
  std::uint64_t next_pending_id_ = 1;

  TrafficLog traffic_;
  Timeline timeline_;
  std::uint64_t event_seq_ = 0;

  friend class WorkerContext;

  // per-(slot key, rank) call counter; rank's k-th call joins slot instance k
  std::uint64_t& call_seq_slot(const std::string& key, int rank) {
    auto& v = call_seq_raw_[key];
    if (v.empty()) v.assign(static_cast<std::size_t>(n_), 0);
    return v[static_cast<std::size_t>(rank)];
  }
};

int WorkerContext::world_size() const { return fabric_->world_size(); }

void WorkerContext::send(WorkerId to, Bytes payload, int round) {
  fabric_->send(rank_, to, std::move(payload), round);
}

Bytes WorkerContext::recv(WorkerId from) { return fabric_->recv(rank_, from); }

PendingRecv WorkerContext::recv_async(WorkerId from) { return fabric_->recv_async(rank_, from); }

Bytes WorkerContext::wait(PendingRecv handle) { return fabric_->wait_recv(rank_, handle); }

std::vector<Bytes> WorkerContext::all_to_all(const ProcessGroup& group,
                                             std::vector<Bytes> payloads) {
  return fabric_->all_to_all(rank_, group, std::move(payloads));
}

void WorkerContext::barrier(const ProcessGroup& group) { fabric_->barrier(rank_, group); }

void WorkerContext::mark(EventKind kind, const std::string& tag, int round) {
  fabric_->mark(rank_, kind, tag, round);
}

RunReport run_protocol(int n_workers, const WorkerProgram& program, const RunOptions& opts) {
  if (n_workers < 1) throw FabricError("run_protocol: need at least one worker");
  Fabric fabric(n_workers, opts);
  return fabric.run(program);
}

}  // namespace uspsim
