#include "crir/replay/buffer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace crir::replay {

SumTree::SumTree(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("SumTree: zero capacity");
  base_ = std::bit_ceil(capacity);
  sum_.assign(2 * base_, 0.0);
  max_.assign(2 * base_, 0.0);
}

void SumTree::set(std::size_t leaf, double value) {
  if (leaf >= capacity_) throw std::out_of_range("SumTree::set: leaf out of range");
  if (!(value >= 0.0) || !std::isfinite(value)) throw std::invalid_argument("SumTree::set: bad priority");
  std::size_t node = base_ + leaf;
  sum_[node] = value;
  max_[node] = value;
  for (node /= 2; node >= 1; node /= 2) {
    sum_[node] = sum_[2 * node] + sum_[2 * node + 1];
    max_[node] = std::max(max_[2 * node], max_[2 * node + 1]);
  }
}

std::size_t SumTree::find(double mass) const {
  std::size_t node = 1;
  while (node < base_) {
    const std::size_t left = 2 * node, right = left + 1;
    if (sum_[right] <= 0.0 || (mass < sum_[left] && sum_[left] > 0.0)) {
      node = left;
    } else {
      mass -= sum_[left];
      node = right;
    }
  }
  return std::min(node - base_, capacity_ - 1);
}

double SumTree::consistency_error() const {
  double err = 0.0;
  for (std::size_t node = 1; node < base_; ++node) {
    err = std::max(err, std::abs(sum_[node] - (sum_[2 * node] + sum_[2 * node + 1])));
  }
  return err;
}

ReplayBuffer::ReplayBuffer(ReplayConfig config)
    : config_(config), tree_(config.capacity), raw_(config.capacity) {
  if (config.alpha < 0.0) throw std::invalid_argument("ReplayBuffer: negative alpha");
  if (!(config.priority_epsilon > 0.0)) throw std::invalid_argument("ReplayBuffer: priority epsilon must be positive");
  slots_.resize(config.capacity);
  serials_.assign(config.capacity, 0);
}

std::size_t ReplayBuffer::push(Transition t) {
  const double priority = size_ == 0 ? 1.0 : raw_.max();
  const std::size_t slot = head_;
  slots_[slot] = std::move(t);
  serials_[slot] = next_serial_++;
  raw_.set(slot, priority);
  tree_.set(slot, std::pow(priority, config_.alpha));
  head_ = (head_ + 1) % config_.capacity;
  size_ = std::min(size_ + 1, config_.capacity);
  return slot;
}

PerSample ReplayBuffer::sample_per(std::size_t batch_size, double beta, Rng& rng) const {
  if (batch_size == 0) throw std::invalid_argument("sample_per: zero batch size");
  if (size_ < batch_size) throw std::length_error("sample_per: buffer holds fewer transitions than the batch");
  PerSample out;
  const double total = tree_.total();
  const double segment = total / static_cast<double>(batch_size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double max_w = 0.0;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const double mass = (static_cast<double>(i) + unit(rng)) * segment;
    const std::size_t slot = tree_.find(mass);
    const double p = tree_.leaf(slot) / total;
    const double w = std::pow(static_cast<double>(size_) * p, -beta);
    out.slots.push_back(slot);
    out.serials.push_back(serials_[slot]);
    out.probabilities.push_back(p);
    out.weights.push_back(w);
    max_w = std::max(max_w, w);
  }
  for (double& w : out.weights) w /= max_w;
  return out;
}

std::vector<std::size_t> ReplayBuffer::sample_uniform(std::size_t batch_size, Rng& rng) const {
  if (batch_size == 0) throw std::invalid_argument("sample_uniform: zero batch size");
  if (size_ < batch_size) throw std::length_error("sample_uniform: buffer holds fewer transitions than the batch");
  // Floyd's algorithm: k distinct values from [0, n) with k draws.
  std::vector<std::size_t> out;
  std::unordered_set<std::size_t> seen;
  out.reserve(batch_size);
  for (std::size_t j = size_ - batch_size; j < size_; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    const std::size_t pick = seen.count(t) ? j : t;
    seen.insert(pick);
    out.push_back(pick);
  }
  return out;
}

void ReplayBuffer::update_priorities(const std::vector<std::size_t>& slots, const std::vector<std::uint64_t>& serials,
                                     const std::vector<double>& td_magnitudes) {
  if (slots.size() != serials.size() || slots.size() != td_magnitudes.size()) {
    throw std::invalid_argument("update_priorities: length mismatch");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::size_t slot = slots[i];
    if (slot >= size_ || serials_[slot] != serials[i]) {
      ++stale_updates_;
      continue;
    }
    const double p = std::abs(td_magnitudes[i]) + config_.priority_epsilon;
    raw_.set(slot, p);
    tree_.set(slot, std::pow(p, config_.alpha));
  }
}

const Transition& ReplayBuffer::at(std::size_t slot) const {
  if (slot >= size_) throw std::out_of_range("ReplayBuffer::at: empty slot");
  return slots_[slot];
}

std::uint64_t ReplayBuffer::serial(std::size_t slot) const {
  if (slot >= size_) throw std::out_of_range("ReplayBuffer::serial: empty slot");
  return serials_[slot];
}

double ReplayBuffer::priority(std::size_t slot) const {
  if (slot >= size_) throw std::out_of_range("ReplayBuffer::priority: empty slot");
  return raw_.leaf(slot);
}

// Snapshot format, all integers and doubles little-endian:
//   "CRIRBUF1" u64 capacity, f64 alpha, f64 epsilon, u64 size, u64 head,
//   u64 next_serial, u64 stale_updates, then per slot a u64 byte length and
//   the record.
namespace {

constexpr char kMagic[8] = {'C', 'R', 'I', 'R', 'B', 'U', 'F', '1'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void doubles(const std::vector<double>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) f64(x);
  }
  const std::string& bytes() const { return bytes_; }
  void clear() { bytes_.clear(); }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> doubles() {
    const std::uint32_t n = u32();
    need(8ull * n);
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ == size_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw std::runtime_error("replay snapshot: truncated record");
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void write_user(Writer& w, const UserProfile& user) {
  if (const auto* id = std::get_if<UserId>(&user)) {
    w.u8(0);
    w.u32(*id);
  } else {
    w.u8(1);
    w.doubles(std::get<std::vector<double>>(user));
  }
}

UserProfile read_user(Reader& r) {
  const std::uint8_t tag = r.u8();
  if (tag == 0) return r.u32();
  if (tag == 1) return r.doubles();
  throw std::runtime_error("replay snapshot: bad user tag");
}

void write_history(Writer& w, std::span<const BehaviorRecord> records) {
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const BehaviorRecord& rec : records) {
    if (const auto* id = std::get_if<ItemId>(&rec.item)) {
      w.u8(0);
      w.u32(*id);
    } else {
      w.u8(1);
      w.doubles(std::get<std::vector<double>>(rec.item));
    }
    w.f64(rec.feedback);
    w.u32(rec.step_index);
  }
}

BehaviorLog read_history(Reader& r) {
  const std::uint32_t n = r.u32();
  BehaviorLog log;
  for (std::uint32_t i = 0; i < n; ++i) {
    BehaviorRecord rec;
    const std::uint8_t tag = r.u8();
    if (tag == 0) {
      rec.item = r.u32();
    } else if (tag == 1) {
      rec.item = r.doubles();
    } else {
      throw std::runtime_error("replay snapshot: bad item tag");
    }
    rec.feedback = r.f64();
    rec.step_index = r.u32();
    log.push_back(std::move(rec));
  }
  return log;
}

bool same_record(const BehaviorRecord& a, const BehaviorRecord& b) {
  return a.item == b.item && a.feedback == b.feedback && a.step_index == b.step_index;
}

}  // namespace

void ReplayBuffer::save(const std::filesystem::path& path) const {
  Writer head;
  head.u64(config_.capacity);
  head.f64(config_.alpha);
  head.f64(config_.priority_epsilon);
  head.u64(size_);
  head.u64(head_);
  head.u64(next_serial_);
  head.u64(stale_updates_);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("replay snapshot: cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  out.write(head.bytes().data(), static_cast<std::streamsize>(head.bytes().size()));

  Writer rec, len;
  for (std::size_t slot = 0; slot < size_; ++slot) {
    const Transition& t = slots_[slot];
    rec.clear();
    len.clear();
    rec.u64(serials_[slot]);
    rec.f64(raw_.leaf(slot));
    write_user(rec, t.user);
    write_history(rec, t.history.records());
    rec.doubles(t.action);
    rec.f64(t.reward);
    write_history(rec, t.next_history.records());
    rec.u8(t.done ? 1 : 0);
    len.u64(rec.bytes().size());
    out.write(len.bytes().data(), 8);
    out.write(rec.bytes().data(), static_cast<std::streamsize>(rec.bytes().size()));
  }
  if (!out) throw std::runtime_error("replay snapshot: write failed for " + path.string());
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("replay snapshot: cannot read " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof kMagic || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("replay snapshot: missing CRIRBUF1 header");
  }
  Reader r(data.data() + sizeof kMagic, data.size() - sizeof kMagic);
  ReplayConfig config;
  config.capacity = r.u64();
  config.alpha = r.f64();
  config.priority_epsilon = r.f64();
  const std::uint64_t size = r.u64();
  const std::uint64_t head = r.u64();
  if (config.capacity == 0 || size > config.capacity || head >= config.capacity) {
    throw std::runtime_error("replay snapshot: inconsistent header");
  }
  ReplayBuffer buf(config);
  buf.size_ = size;
  buf.head_ = head;
  buf.next_serial_ = r.u64();
  buf.stale_updates_ = r.u64();

  for (std::size_t slot = 0; slot < size; ++slot) {
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw std::runtime_error("replay snapshot: truncated record");
    std::vector<char> body(len);
    for (char& c : body) c = static_cast<char>(r.u8());
    Reader rr(body.data(), body.size());
    buf.serials_[slot] = rr.u64();
    const double priority = rr.f64();
    Transition t;
    t.user = read_user(rr);
    auto history = std::make_shared<const BehaviorLog>(read_history(rr));
    t.action = rr.doubles();
    t.reward = rr.f64();
    auto next = std::make_shared<const BehaviorLog>(read_history(rr));
    t.done = rr.u8() != 0;
    if (!rr.done()) throw std::runtime_error("replay snapshot: record length mismatch");
    // Restore log sharing when the history is a prefix of the next one.
    const bool prefix = history->size() <= next->size() &&
                        std::equal(history->begin(), history->end(), next->begin(), same_record);
    t.history = prefix ? HistoryView{next, history->size()} : HistoryView{history, history->size()};
    t.next_history = HistoryView{next, next->size()};
    buf.slots_[slot] = std::move(t);
    buf.raw_.set(slot, priority);
    buf.tree_.set(slot, std::pow(priority, config.alpha));
  }
  if (!r.done()) throw std::runtime_error("replay snapshot: trailing bytes");
  return buf;
}

}  // namespace crir::replay
