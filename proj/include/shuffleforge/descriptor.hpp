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
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shuffleforge/topology.hpp"

namespace shuffleforge {

// Buffers a descriptor can address. The simulator has no shared address
// space, so descriptors name (kind, gpu) instead of carrying raw pointers.
enum class BufferKind : std::uint8_t {
  kTokens,          // source token rows, contiguous per GPU
  kForward,         // forwarder receive buffer, dispatch path
  kActivation,      // expert-major activation rows
  kCombineForward,  // forwarder receive buffer, combine path
  kStaging,         // K rows per token at the source, combine path
};

inline const char* to_string(BufferKind k) {
  switch (k) {
    case BufferKind::kTokens: return "tokens";
    case BufferKind::kForward: return "forward";
    case BufferKind::kActivation: return "activation";
    case BufferKind::kCombineForward: return "combine_forward";
    case BufferKind::kStaging: return "staging";
  }
  return "unknown";
}

struct BufferId {
  BufferKind kind = BufferKind::kTokens;
  std::uint32_t gpu = 0;  // flat GPU index

  friend constexpr auto operator<=>(const BufferId&, const BufferId&) = default;
};

struct SegmentDescriptor {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend constexpr bool operator==(const SegmentDescriptor&, const SegmentDescriptor&) = default;
};

// Position in a descriptor list's logical byte stream.
struct SegmentCursor {
  std::size_t segment = 0;
  std::uint64_t offset = 0;

  friend constexpr auto operator<=>(const SegmentCursor&, const SegmentCursor&) = default;
};

// A dense array of segment descriptors over one buffer. Prefix sums are kept
// alongside so any byte of the concatenated stream maps to its segment in
// O(log n).
class DescriptorList {
 public:
  DescriptorList() = default;
  explicit DescriptorList(BufferId buffer) : buffer_(buffer) {}
  DescriptorList(BufferId buffer, std::span<const SegmentDescriptor> items) : buffer_(buffer) {
    items_.reserve(items.size());
    prefix_.reserve(items.size() + 1);
    for (const auto& d : items) append(d.offset, d.length);
  }

  void append(std::uint64_t offset, std::uint64_t length) {
    if (length == 0) throw ShuffleError("descriptor: zero-length segment");
    items_.push_back({offset, length});
    prefix_.push_back(prefix_.back() + length);
  }

  void reserve(std::size_t n) {
    items_.reserve(n);
    prefix_.reserve(n + 1);
  }

  BufferId buffer() const { return buffer_; }
  std::span<const SegmentDescriptor> items() const { return items_; }
  const SegmentDescriptor& operator[](std::size_t i) const { return items_[i]; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::uint64_t total_bytes() const { return prefix_.back(); }
  // Bytes in segments [0, i).
  std::uint64_t prefix(std::size_t i) const { return prefix_[i]; }

  // Largest offset + length; the minimum buffer size this list needs.
  std::uint64_t extent() const {
    std::uint64_t hi = 0;
    for (const auto& d : items_) hi = std::max(hi, d.offset + d.length);
    return hi;
  }

  // Segment holding byte `cumulative` of the stream and the offset inside it.
  // At total_bytes() this is one past the last segment.
  SegmentCursor locate(std::uint64_t cumulative) const {
    if (cumulative > total_bytes()) {
      throw std::out_of_range("descriptor: cumulative byte " + std::to_string(cumulative) +
                              " past total " + std::to_string(total_bytes()));
    }
    auto it = std::upper_bound(prefix_.begin(), prefix_.end(), cumulative);
    auto i = static_cast<std::size_t>(it - prefix_.begin()) - 1;
    return {i, cumulative - prefix_[i]};
  }

  friend bool operator==(const DescriptorList& a, const DescriptorList& b) {
    return a.buffer_ == b.buffer_ && a.items_ == b.items_;
  }

 private:
  BufferId buffer_{};
  std::vector<SegmentDescriptor> items_;
  std::vector<std::uint64_t> prefix_{0};
};

inline void check_in_bounds(const DescriptorList& list, std::size_t buffer_size) {
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& d = list[i];
    if (d.offset > buffer_size || d.length > buffer_size - d.offset) {
      throw ShuffleError("descriptor " + std::to_string(i) + " [" + std::to_string(d.offset) + ", +" +
                         std::to_string(d.length) + ") exceeds " + to_string(list.buffer().kind) +
                         " buffer of " + std::to_string(buffer_size) + " bytes");
    }
  }
}

// Rejects lists in which two segments write the same byte.
inline void check_disjoint(const DescriptorList& list) {
  std::vector<SegmentDescriptor> sorted(list.items().begin(), list.items().end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.offset < b.offset; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i - 1].offset + sorted[i - 1].length > sorted[i].offset) {
      throw ShuffleError("descriptor: overlapping receive segments at offset " +
                         std::to_string(sorted[i].offset));
    }
  }
}

// A send list and its receive list must pair segment i with segment i.
inline void check_matched(const DescriptorList& send, const DescriptorList& recv) {
  if (send.size() != recv.size()) {
    throw ShuffleError("descriptor: send/recv count mismatch " + std::to_string(send.size()) +
                       " vs " + std::to_string(recv.size()));
  }
  for (std::size_t i = 0; i < send.size(); ++i) {
    if (send[i].length != recv[i].length) {
      throw ShuffleError("descriptor: send/recv length mismatch at segment " + std::to_string(i));
    }
  }
}

// Copies stream bytes [begin, begin + out.size()) of list out of src.
// Bounds are the caller's responsibility (see check_in_bounds).
inline void gather_range(const DescriptorList& list, std::span<const std::byte> src,
                         std::uint64_t begin, std::span<std::byte> out) {
  if (out.empty()) return;
  auto cur = list.locate(begin);
  std::size_t written = 0;
  while (written < out.size()) {
    const auto& d = list[cur.segment];
    std::size_t n = std::min<std::size_t>(out.size() - written, d.length - cur.offset);
    std::memcpy(out.data() + written, src.data() + d.offset + cur.offset, n);
    written += n;
    ++cur.segment;
    cur.offset = 0;
  }
}

// Writes in to stream bytes [begin, begin + in.size()) of list inside dst.
inline void scatter_range(const DescriptorList& list, std::span<const std::byte> in,
                          std::uint64_t begin, std::span<std::byte> dst) {
  if (in.empty()) return;
  auto cur = list.locate(begin);
  std::size_t read = 0;
  while (read < in.size()) {
    const auto& d = list[cur.segment];
    std::size_t n = std::min<std::size_t>(in.size() - read, d.length - cur.offset);
    std::memcpy(dst.data() + d.offset + cur.offset, in.data() + read, n);
    read += n;
    ++cur.segment;
    cur.offset = 0;
  }
}

// out = concatenation of list's segments of src, in list order.
inline void gather(const DescriptorList& list, std::span<const std::byte> src, std::span<std::byte> out) {
  if (out.size() != list.total_bytes()) throw ShuffleError("gather: output region size mismatch");
  check_in_bounds(list, src.size());
  gather_range(list, src, 0, out);
}

// Writes consecutive pieces of in to list's segments of dst. Bytes outside
// the segments are left untouched.
inline void scatter(const DescriptorList& list, std::span<const std::byte> in, std::span<std::byte> dst) {
  if (in.size() != list.total_bytes()) throw ShuffleError("scatter: input region size mismatch");
  check_in_bounds(list, dst.size());
  check_disjoint(list);
  scatter_range(list, in, 0, dst);
}

struct Slice {
  std::size_t first_segment = 0;
  std::uint64_t first_offset = 0;
  std::uint64_t byte_len = 0;
  // Position of the slice in the logical stream.
  std::uint64_t stream_offset = 0;
};

// Tiles the list's stream with slices of slice_bytes; only the last one may
// be shorter.
inline std::vector<Slice> slice_plan(const DescriptorList& list, std::uint64_t slice_bytes) {
  if (slice_bytes == 0) throw ShuffleError("slice_plan: slice_bytes must be > 0");
  std::vector<Slice> out;
  const std::uint64_t total = list.total_bytes();
  out.reserve(static_cast<std::size_t>((total + slice_bytes - 1) / slice_bytes));
  for (std::uint64_t at = 0; at < total; at += slice_bytes) {
    auto cur = list.locate(at);
    out.push_back({cur.segment, cur.offset, std::min(slice_bytes, total - at), at});
  }
  return out;
}

// Little-endian u64 count followed by (u64 offset, u64 length) pairs.
inline std::vector<std::uint8_t> serialize(const DescriptorList& list) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 16 * list.size());
  auto put = [&out](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(list.size());
  for (const auto& d : list.items()) {
    put(d.offset);
    put(d.length);
  }
  return out;
}

inline DescriptorList deserialize(BufferId buffer, std::span<const std::uint8_t> bytes) {
  auto get = [&bytes](std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  if (bytes.size() < 8) throw ShuffleError("descriptor blob truncated");
  std::uint64_t count = get(0);
  if ((bytes.size() - 8) / 16 < count || bytes.size() != 8 + 16 * count) {
    throw ShuffleError("descriptor blob size does not match its count");
  }
  DescriptorList list(buffer);
  list.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) list.append(get(8 + 16 * i), get(16 + 16 * i));
  return list;
}

}  // namespace shuffleforge
