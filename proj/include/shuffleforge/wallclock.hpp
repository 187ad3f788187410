// Copyright 2026 The ShuffleForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "shuffleforge/buffers.hpp"
#include "shuffleforge/planner.hpp"
#include "shuffleforge/report.hpp"
#include "shuffleforge/topology.hpp"

namespace shuffleforge {

struct WallclockOptions {
  // Pace every link at its topology bandwidth.
  bool throttle = true;
  // Abort when no worker makes progress for this long.
  std::chrono::milliseconds stall_timeout{60'000};
};

namespace wallclock_detail {

using Clock = std::chrono::steady_clock;

struct Chunk {
  std::uint32_t pair = 0;
  std::uint64_t offset = 0;
  Bytes data;
  Clock::time_point deliver_at;
};

// A directed GPU-to-GPU link: a bounded FIFO of slices. The queue is guarded
// by the receiver's mutex; next_free belongs to the single sender.
struct Link {
  std::deque<Chunk> queue;
  std::size_t capacity = 1;
  double bandwidth = 0;
  Clock::time_point next_free{};
  std::uint32_t from = 0;
};

struct Mailbox {
  std::mutex mu;
  std::condition_variable cv;
  bool wake = false;
  std::vector<Link*> incoming;
};

struct PairInfo {
  const TransferPair* pair = nullptr;
  std::uint32_t from = 0;
  std::uint32_t to = 0;
  int stage = 0;
  bool packed = false;
  bool unpacked = false;
  bool reads_intermediate = false;
  bool writes_intermediate = false;
};

inline void poke(Mailbox& m) {
  {
    std::lock_guard lock(m.mu);
    m.wake = true;
  }
  m.cv.notify_one();
}

class Cluster {
 public:
  Cluster(const CommPlan& plan, ClusterBuffers& buffers, const ClusterTopology& topo, ExecutionStyle style,
          WallclockOptions options)
      : plan_(plan), buffers_(buffers), topo_(topo), style_(style), options_(options) {
    const std::size_t g = topo.num_gpus();
    mailboxes_ = std::vector<Mailbox>(g);
    links_.resize(g * g);
    expected_in_.assign(g, 0);
    expected_intermediate_.assign(g, 0);
    const auto mid = intermediate_kind(plan.direction);
    int stage = 0;
    for (const auto* list : {&plan.first_stage(), &plan.second_stage()}) {
      for (const auto& p : *list) {
        PairInfo info;
        info.pair = &p;
        info.from = static_cast<std::uint32_t>(topo.flat(p.from));
        info.to = static_cast<std::uint32_t>(topo.flat(p.to));
        info.stage = stage;
        info.packed = is_packed(p, plan.direction, style);
        info.unpacked = is_unpacked(p, plan.direction, style);
        info.reads_intermediate = p.send.buffer().kind == mid;
        info.writes_intermediate = p.recv.buffer().kind == mid;
        check_in_bounds(p.send, buffers.at(p.send.buffer()).size());
        check_in_bounds(p.recv, buffers.at(p.recv.buffer()).size());
        if (info.from != info.to) {
          expected_in_[info.to] += p.bytes();
          auto& link = links_[info.from * g + info.to];
          if (!link) {
            link = std::make_unique<Link>();
            link->capacity = topo.ring_slices;
            link->bandwidth = p.crosses_nodes() ? topo.inter_bw : topo.intra_bw;
            link->from = info.from;
            mailboxes_[info.to].incoming.push_back(link.get());
          }
        }
        if (info.writes_intermediate) expected_intermediate_[info.to] += p.bytes();
        pairs_.push_back(info);
      }
      ++stage;
    }
  }

  StageTimes run() {
    const std::size_t g = topo_.num_gpus();
    std::vector<double> rearrange(g, 0.0);
    auto start = Clock::now();
    {
      std::vector<std::jthread> workers;
      workers.reserve(g);
      for (std::size_t w = 0; w < g; ++w) {
        workers.emplace_back([this, w, &rearrange] {
          try {
            rearrange[w] = work(static_cast<std::uint32_t>(w));
          } catch (...) {
            fail(std::current_exception());
          }
        });
      }
    }
    double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    if (error_) std::rethrow_exception(error_);
    StageTimes t;
    t.rearrange = *std::max_element(rearrange.begin(), rearrange.end());
    t.communicate = std::max(0.0, elapsed - t.rearrange);
    return t;
  }

 private:
  void fail(std::exception_ptr e) {
    {
      std::lock_guard lock(error_mu_);
      if (!error_) error_ = e;
    }
    abort_.store(true);
    for (auto& m : mailboxes_) poke(m);
  }

  // Returns the worker's standalone pack + unpack time.
  double work(std::uint32_t self) {
    const std::size_t g = topo_.num_gpus();
    double rearrange = 0;

    std::vector<std::size_t> jobs;
    std::vector<Bytes> packed(pairs_.size());
    std::vector<Bytes> landing(pairs_.size());
    auto t0 = Clock::now();
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
      const auto& info = pairs_[i];
      if (info.from == self) {
        jobs.push_back(i);
        if (info.packed) {
          packed[i].resize(info.pair->bytes());
          gather(info.pair->send, buffers_.at(info.pair->send.buffer()), packed[i]);
        }
      }
      if (info.to == self && info.unpacked) landing[i].resize(info.pair->bytes());
    }
    bool packs = false, unpacks = false;
    for (const auto& info : pairs_) {
      packs = packs || (info.from == self && info.packed);
      unpacks = unpacks || (info.to == self && info.unpacked);
    }
    if (packs) rearrange += std::chrono::duration<double>(Clock::now() - t0).count();

    std::vector<std::uint64_t> sent(pairs_.size(), 0);
    std::uint64_t received = 0;
    std::uint64_t intermediate = 0;
    std::size_t done_jobs = 0;
    std::vector<bool> job_done(pairs_.size(), false);
    auto& box = mailboxes_[self];
    auto last_progress = Clock::now();
    std::vector<Chunk> ready;
    std::vector<std::uint32_t> freed;

    auto deliver = [&](std::uint32_t index, std::uint64_t offset, std::span<const std::byte> bytes) {
      const auto& info = pairs_[index];
      if (info.unpacked) {
        std::memcpy(landing[index].data() + offset, bytes.data(), bytes.size());
      } else {
        scatter_range(info.pair->recv, bytes, offset, buffers_.at(info.pair->recv.buffer()));
      }
      if (info.writes_intermediate) intermediate += bytes.size();
    };

    while (!abort_.load()) {
      bool progress = false;
      auto now = Clock::now();
      auto next_due = now + std::chrono::milliseconds(2);

      ready.clear();
      freed.clear();
      {
        std::lock_guard lock(box.mu);
        box.wake = false;
        for (Link* link : box.incoming) {
          bool was_full = link->queue.size() >= link->capacity;
          while (!link->queue.empty() && link->queue.front().deliver_at <= now) {
            ready.push_back(std::move(link->queue.front()));
            link->queue.pop_front();
          }
          if (!link->queue.empty()) next_due = std::min(next_due, link->queue.front().deliver_at);
          if (was_full && link->queue.size() < link->capacity) freed.push_back(link->from);
        }
      }
      for (auto from : freed) poke(mailboxes_[from]);
      for (auto& c : ready) {
        deliver(c.pair, c.offset, c.data);
        received += c.data.size();
        progress = true;
      }

      for (std::size_t i : jobs) {
        if (job_done[i]) continue;
        const auto& info = pairs_[i];
        if (info.reads_intermediate && intermediate < expected_intermediate_[self]) continue;
        const auto& p = *info.pair;
        std::span<const std::byte> src = buffers_.at(p.send.buffer());
        if (info.to == self) {
          if (info.packed) {
            deliver(static_cast<std::uint32_t>(i), 0, packed[i]);
          } else if (info.unpacked) {
            gather(p.send, src, landing[i]);
            if (info.writes_intermediate) intermediate += p.bytes();
          } else {
            copy_pair(p, src, buffers_.at(p.recv.buffer()));
            if (info.writes_intermediate) intermediate += p.bytes();
          }
          job_done[i] = true;
          ++done_jobs;
          progress = true;
          continue;
        }
        Link& link = *links_[info.from * g + info.to];
        {
          std::lock_guard lock(mailboxes_[info.to].mu);
          if (link.queue.size() >= link.capacity) continue;
        }
        Chunk c;
        c.pair = static_cast<std::uint32_t>(i);
        c.offset = sent[i];
        const std::uint64_t len = std::min<std::uint64_t>(topo_.slice_bytes, p.bytes() - sent[i]);
        c.data.resize(len);
        if (info.packed) {
          std::memcpy(c.data.data(), packed[i].data() + sent[i], len);
        } else {
          gather_range(p.send, src, sent[i], c.data);
        }
        auto stamp = Clock::now();
        if (options_.throttle) {
          auto start = std::max(stamp, link.next_free);
          auto wire = std::chrono::duration_cast<Clock::duration>(
              std::chrono::duration<double>(static_cast<double>(len) / link.bandwidth));
          link.next_free = start + wire;
          c.deliver_at = link.next_free;
        } else {
          c.deliver_at = stamp;
        }
        sent[i] += len;
        {
          std::lock_guard lock(mailboxes_[info.to].mu);
          link.queue.push_back(std::move(c));
          mailboxes_[info.to].wake = true;
        }
        mailboxes_[info.to].cv.notify_one();
        if (sent[i] == p.bytes()) {
          job_done[i] = true;
          ++done_jobs;
        }
        progress = true;
      }

      if (done_jobs == jobs.size() && received == expected_in_[self]) break;
      if (progress) {
        last_progress = Clock::now();
        continue;
      }
      if (Clock::now() - last_progress > options_.stall_timeout) {
        throw ShuffleError("wallclock: worker " + std::to_string(self) + " stalled");
      }
      std::unique_lock lock(box.mu);
      box.cv.wait_until(lock, next_due, [&] { return box.wake || abort_.load(); });
    }
    if (abort_.load()) return rearrange;

    auto t1 = Clock::now();
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
      const auto& info = pairs_[i];
      if (info.to == self && info.unpacked) {
        scatter(info.pair->recv, landing[i], buffers_.at(info.pair->recv.buffer()));
      }
    }
    if (unpacks) rearrange += std::chrono::duration<double>(Clock::now() - t1).count();
    return rearrange;
  }

  const CommPlan& plan_;
  ClusterBuffers& buffers_;
  const ClusterTopology& topo_;
  ExecutionStyle style_;
  WallclockOptions options_;
  std::vector<Mailbox> mailboxes_;
  std::vector<std::unique_ptr<Link>> links_;
  std::vector<PairInfo> pairs_;
  std::vector<std::uint64_t> expected_in_;
  std::vector<std::uint64_t> expected_intermediate_;
  std::atomic<bool> abort_{false};
  std::mutex error_mu_;
  std::exception_ptr error_;
};

}  // namespace wallclock_detail

// Runs a plan with one thread per simulated GPU. Links are bounded FIFO
// queues of slices, paced at the topology's bandwidths. Buffers must already
// be prepared for the plan. Returns measured stage times.
inline StageTimes wallclock_run(const CommPlan& plan, ClusterBuffers& buffers, const ClusterTopology& topo,
                                ExecutionStyle style = ExecutionStyle::kFused, WallclockOptions options = {}) {
  wallclock_detail::Cluster cluster(plan, buffers, topo, style, options);
  return cluster.run();
}

}  // namespace shuffleforge
