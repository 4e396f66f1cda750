#pragma once

// Online grammar inference over terminal streams.
//
// SequiturBuilder maintains a Sequitur grammar extended with run-length
// exponents: adjacent repetitions of a symbol collapse into one symbol with
// an exponent, so loops compress to X^n instead of a binary tree of rules.
// A Grammar is the immutable, canonically numbered snapshot of a builder and
// is what gets remapped, compared, serialized and expanded.

#include <absl/container/flat_hash_map.h>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "iotrace/bytes.hpp"
#include "iotrace/error.hpp"

namespace iotrace {

/// Non-negative ids are terminals (indices into a signature table),
/// negative ids are rules.
struct Symbol {
  std::int32_t id = 0;
  std::uint32_t exponent = 1;

  bool is_rule() const noexcept { return id < 0; }
  friend bool operator==(const Symbol&, const Symbol&) = default;
  friend auto operator<=>(const Symbol&, const Symbol&) = default;
};

inline constexpr std::int32_t kStartRule = -1;
inline constexpr std::uint64_t kDefaultExpansionBound = std::uint64_t{1} << 32;

class Grammar {
 public:
  using Body = std::vector<Symbol>;
  using RuleMap = std::map<std::int32_t, Body, std::greater<>>;

  Grammar() { rules_[kStartRule]; }

  /// Takes rules as given. Structure is checked (start rule present, ids
  /// negative, exponents >= 1, references resolvable, acyclic).
  explicit Grammar(RuleMap rules) : rules_(std::move(rules)) {
    rules_.try_emplace(kStartRule);
    check_structure();
  }

  const RuleMap& rules() const noexcept { return rules_; }
  const Body& start() const { return rules_.at(kStartRule); }
  const Body& rule(std::int32_t id) const {
    auto it = rules_.find(id);
    if (it == rules_.end()) throw Error(Errc::MalformedGrammar, "dangling rule " + std::to_string(id));
    return it->second;
  }

  std::size_t rule_count() const noexcept { return rules_.size(); }
  std::size_t symbol_count() const noexcept {
    std::size_t n = 0;
    for (const auto& [id, body] : rules_) n += body.size();
    return n;
  }

  /// Number of terminals the grammar expands to. Throws MalformedGrammar if
  /// the length exceeds `bound`.
  std::uint64_t expanded_length(std::uint64_t bound = kDefaultExpansionBound) const {
    auto lengths = rule_lengths(bound);
    return lengths.at(kStartRule);
  }

  /// Streams the terminal sequence to `emit` in order.
  template <class Emit>
  void for_each_terminal(Emit&& emit, std::uint64_t bound = kDefaultExpansionBound) const {
    (void)rule_lengths(bound);
    struct Frame {
      const Body* body;
      std::size_t pos;
      std::uint32_t reps_left;
    };
    std::vector<Frame> stack;
    const auto& s = start();
    if (!s.empty()) stack.push_back({&s, 0, 1});
    while (!stack.empty()) {
      auto& top = stack.back();
      if (top.pos == top.body->size()) {
        if (--top.reps_left > 0) {
          top.pos = 0;
        } else {
          stack.pop_back();
        }
        continue;
      }
      const Symbol sym = (*top.body)[top.pos++];
      if (sym.is_rule()) {
        const auto& body = rules_.find(sym.id)->second;
        if (!body.empty()) stack.push_back({&body, 0, sym.exponent});
      } else {
        for (std::uint32_t k = 0; k < sym.exponent; ++k) emit(static_cast<std::uint32_t>(sym.id));
      }
    }
  }

  std::vector<std::uint32_t> expand(std::uint64_t bound = kDefaultExpansionBound) const {
    std::vector<std::uint32_t> out;
    out.reserve(static_cast<std::size_t>(expanded_length(bound)));
    for_each_terminal([&](std::uint32_t t) { out.push_back(t); }, bound);
    return out;
  }

  /// Every terminal id appearing anywhere in the rules.
  std::set<std::uint32_t> terminals() const {
    std::set<std::uint32_t> out;
    for (const auto& [id, body] : rules_) {
      for (const auto& sym : body) {
        if (!sym.is_rule()) out.insert(static_cast<std::uint32_t>(sym.id));
      }
    }
    return out;
  }

  /// Canonical bytes: u32 rule count, then per rule (start rule first,
  /// descending ids): i32 id, u32 symbol count, (i32 id, u32 exponent) pairs.
  std::string serialize() const {
    ByteWriter w;
    w.put(static_cast<std::uint32_t>(rules_.size()));
    for (const auto& [id, body] : rules_) {
      w.put(id);
      w.put(static_cast<std::uint32_t>(body.size()));
      for (const auto& sym : body) {
        w.put(sym.id);
        w.put(sym.exponent);
      }
    }
    return std::move(w).take();
  }

  static Grammar deserialize(std::string_view bytes, std::size_t base_offset = 0) {
    ByteReader r(bytes, base_offset);
    RuleMap rules;
    auto count = r.get<std::uint32_t>();
    // Each rule needs at least 8 bytes; rejects absurd counts before allocating.
    if (count > r.remaining() / 8) throw DecodeError(r.offset(), "rule count exceeds data");
    for (std::uint32_t i = 0; i < count; ++i) {
      auto id_offset = r.offset();
      auto id = r.get<std::int32_t>();
      if (id >= 0) throw DecodeError(id_offset, "non-negative rule id");
      auto n = r.get<std::uint32_t>();
      if (n > r.remaining() / 8) throw DecodeError(r.offset(), "symbol count exceeds data");
      Body body;
      body.reserve(n);
      for (std::uint32_t k = 0; k < n; ++k) {
        auto sym_offset = r.offset();
        Symbol s{r.get<std::int32_t>(), r.get<std::uint32_t>()};
        if (s.exponent == 0) throw DecodeError(sym_offset, "zero exponent");
        body.push_back(s);
      }
      if (!rules.emplace(id, std::move(body)).second) throw DecodeError(id_offset, "duplicate rule id");
    }
    r.expect_done("grammar");
    if (!rules.contains(kStartRule)) throw DecodeError(base_offset, "missing start rule");
    try {
      return Grammar(std::move(rules));
    } catch (const Error& e) {
      throw DecodeError(base_offset, e.what());
    }
  }

  /// Verifies the four grammar invariants: digram uniqueness, rule utility
  /// (exponent-weighted use count >= 2 for non-start rules), no adjacent
  /// symbols with equal ids, and acyclic rule references.
  void check_invariants() const {
    check_structure();
    std::map<std::int32_t, std::uint64_t> usage;
    std::set<std::pair<Symbol, Symbol>> digrams;
    for (const auto& [id, body] : rules_) {
      for (std::size_t i = 0; i < body.size(); ++i) {
        if (body[i].is_rule()) usage[body[i].id] += body[i].exponent;
        if (i + 1 < body.size()) {
          if (body[i].id == body[i + 1].id) {
            throw Error(Errc::MalformedGrammar, "adjacent equal symbols in rule " + std::to_string(id));
          }
          if (!digrams.emplace(body[i], body[i + 1]).second) {
            throw Error(Errc::MalformedGrammar, "repeated digram in rule " + std::to_string(id));
          }
        }
      }
    }
    for (const auto& [id, body] : rules_) {
      if (id == kStartRule) continue;
      if (usage[id] < 2) {
        throw Error(Errc::MalformedGrammar, "rule " + std::to_string(id) + " used fewer than twice");
      }
    }
  }

  friend bool operator==(const Grammar&, const Grammar&) = default;

 private:
  void check_structure() const {
    for (const auto& [id, body] : rules_) {
      if (id >= 0) throw Error(Errc::MalformedGrammar, "rule id must be negative");
      for (const auto& sym : body) {
        if (sym.exponent == 0) throw Error(Errc::MalformedGrammar, "zero exponent");
        if (sym.is_rule() && !rules_.contains(sym.id)) {
          throw Error(Errc::MalformedGrammar, "dangling rule " + std::to_string(sym.id));
        }
      }
    }
    (void)rule_lengths(UINT64_MAX);
  }

  /// Expanded length of every rule, saturating just above `bound`. Iterative
  /// DFS so deep rule chains cannot overflow the call stack; detects cycles.
  std::unordered_map<std::int32_t, std::uint64_t> rule_lengths(std::uint64_t bound) const {
    enum class Mark : std::uint8_t { Visiting, Done };
    std::unordered_map<std::int32_t, Mark> marks;
    std::unordered_map<std::int32_t, std::uint64_t> lengths;
    auto saturate = [&](unsigned __int128 v) -> std::uint64_t {
      return v > bound ? (bound == UINT64_MAX ? UINT64_MAX : bound + 1) : static_cast<std::uint64_t>(v);
    };
    for (const auto& [root, unused] : rules_) {
      if (marks.contains(root)) continue;
      std::vector<std::pair<std::int32_t, std::size_t>> stack{{root, 0}};
      marks[root] = Mark::Visiting;
      while (!stack.empty()) {
        auto& [id, pos] = stack.back();
        const auto& body = rules_.find(id)->second;
        if (pos < body.size()) {
          const auto& sym = body[pos++];
          if (!sym.is_rule()) continue;
          auto it = marks.find(sym.id);
          if (it == marks.end()) {
            if (!rules_.contains(sym.id)) {
              throw Error(Errc::MalformedGrammar, "dangling rule " + std::to_string(sym.id));
            }
            marks[sym.id] = Mark::Visiting;
            stack.emplace_back(sym.id, 0);
          } else if (it->second == Mark::Visiting) {
            throw Error(Errc::MalformedGrammar, "cyclic rule reference at " + std::to_string(sym.id));
          }
          continue;
        }
        unsigned __int128 total = 0;
        for (const auto& sym : body) {
          std::uint64_t unit = sym.is_rule() ? lengths[sym.id] : 1;
          total += static_cast<unsigned __int128>(unit) * sym.exponent;
          if (total > bound) break;
        }
        lengths[id] = saturate(total);
        marks[id] = Mark::Done;
        stack.pop_back();
      }
    }
    if (lengths[kStartRule] > bound) {
      throw Error(Errc::MalformedGrammar, "expansion exceeds bound of " + std::to_string(bound));
    }
    return lengths;
  }

  RuleMap rules_;
};

inline bool grammar_equal(const Grammar& a, const Grammar& b) { return a.serialize() == b.serialize(); }

/// Incremental Sequitur with run-length exponents. Single owner; not safe for
/// concurrent mutation.
class SequiturBuilder {
 public:
  SequiturBuilder() { make_rule(kStartRule); }

  SequiturBuilder(const SequiturBuilder&) = delete;
  SequiturBuilder& operator=(const SequiturBuilder&) = delete;
  SequiturBuilder(SequiturBuilder&&) noexcept = default;
  SequiturBuilder& operator=(SequiturBuilder&&) noexcept = default;

  void append(std::uint32_t terminal) {
    if (terminal > static_cast<std::uint32_t>(INT32_MAX)) {
      throw Error(Errc::InvalidArgument, "terminal index out of range");
    }
    auto id = static_cast<std::int32_t>(terminal);
    Node* last = rule(kStartRule).guard->prev;
    if (!is_guard(last) && last->id == id && last->exp < UINT32_MAX) {
      set_exp(last, last->exp + 1);
    } else {
      Node* n = new_node(id, 1);
      link_after(last, n);
      touch(n->prev);
      touch(n);
    }
    drain();
    ++length_;
  }

  std::uint64_t length() const noexcept { return length_; }

  /// Full scan of the digram index against the live rule bodies. Throws
  /// MalformedGrammar on a missing, stale or dead entry.
  void check_index() const {
    std::size_t digrams = 0;
    for (const auto& r : rules_) {
      if (!r.guard) continue;
      for (Node* n = r.guard->next; !is_guard(n); n = n->next) {
        if (!has_digram(n)) continue;
        ++digrams;
        if (!index_.contains(key(n))) throw Error(Errc::MalformedGrammar, "digram missing from index");
      }
    }
    for (const auto& [k, n] : index_) {
      if (!is_alive(n) || !has_digram(n)) throw Error(Errc::MalformedGrammar, "index entry is not a live digram");
      if (!(key(n) == k)) throw Error(Errc::MalformedGrammar, "stale index entry");
    }
    if (index_.size() != digrams) throw Error(Errc::MalformedGrammar, "index size differs from digram count");
  }

  std::size_t rule_count() const noexcept { return live_rules_; }

  /// Canonical snapshot: rules renumbered -1, -2, ... in breadth-first order
  /// of first reference from the start rule.
  Grammar snapshot() const {
    std::unordered_map<std::int32_t, std::int32_t> canon{{kStartRule, kStartRule}};
    std::vector<std::int32_t> queue{kStartRule};
    std::int32_t next_id = kStartRule - 1;
    Grammar::RuleMap rules;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const Rule& r = rule(queue[qi]);
      Grammar::Body body;
      for (Node* n = r.guard->next; !is_guard(n); n = n->next) {
        Symbol sym{n->id, n->exp};
        if (n->id < 0) {
          auto [it, inserted] = canon.try_emplace(n->id, next_id);
          if (inserted) {
            --next_id;
            queue.push_back(n->id);
          }
          sym.id = it->second;
        }
        body.push_back(sym);
      }
      rules.emplace(canon.at(queue[qi]), std::move(body));
    }
    return Grammar(std::move(rules));
  }

 private:
  // Guards carry exponent 0. A dead node has no prev link.
  struct Node {
    std::int32_t id;  // symbol id, or owning rule id for guards
    std::uint32_t exp;
    Node* prev;
    Node* next;
  };

  struct Rule {
    Node* guard = nullptr;  // null once the rule has been inlined
    std::uint64_t usage = 0;  // sum of exponents over referencing nodes
  };

  static std::uint64_t pack(const Node* n) noexcept {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(n->id)) << 32) | n->exp;
  }
  static bool is_guard(const Node* n) noexcept { return n->exp == 0; }
  static bool is_alive(const Node* n) noexcept { return n->prev != nullptr; }
  static bool has_digram(const Node* n) noexcept { return !is_guard(n) && !is_guard(n->next); }

  struct DigramKey {
    std::uint64_t left;
    std::uint64_t right;
    friend bool operator==(const DigramKey&, const DigramKey&) = default;
  };
  struct DigramHash {
    std::size_t operator()(const DigramKey& k) const noexcept {
      std::uint64_t h = k.left * 0x9E3779B97F4A7C15ULL;
      h ^= (h >> 29) ^ (k.right * 0xC2B2AE3D27D4EB4FULL);
      h ^= h >> 32;
      return static_cast<std::size_t>(h);
    }
  };
  static DigramKey key(const Node* n) noexcept { return {pack(n), pack(n->next)}; }

  Rule& rule(std::int32_t id) { return rules_[static_cast<std::size_t>(-id - 1)]; }
  const Rule& rule(std::int32_t id) const { return rules_[static_cast<std::size_t>(-id - 1)]; }

  Node* new_node(std::int32_t id, std::uint32_t exp) {
    Node* n;
    if (!free_.empty()) {
      n = free_.back();
      free_.pop_back();
    } else {
      n = allocate();
    }
    *n = Node{id, exp, nullptr, nullptr};
    if (id < 0) rule(id).usage += exp;
    return n;
  }

  Rule& make_rule(std::int32_t id) {
    if (static_cast<std::size_t>(-id - 1) != rules_.size()) {
      throw Error(Errc::MalformedGrammar, "rule ids must be allocated in order");
    }
    Node* g = allocate();
    *g = Node{id, 0, g, g};
    rules_.push_back(Rule{g, 0});
    ++live_rules_;
    return rules_.back();
  }

  // Nodes live in chunks that double up to a fixed size, so addresses stay
  // stable and dense whatever the state of the heap.
  static constexpr std::size_t kMaxChunkNodes = 8192;

  Node* allocate() {
    if (chunk_used_ == chunk_size_) {
      chunk_size_ = chunks_.empty() ? 64 : std::min(2 * chunk_size_, kMaxChunkNodes);
      chunks_.push_back(std::make_unique_for_overwrite<Node[]>(chunk_size_));
      chunk_used_ = 0;
    }
    return &chunks_.back()[chunk_used_++];
  }

  /// Marks a node dead. Its memory is only reused after the current append
  /// finishes, so queued pointers to it stay safe to inspect.
  void kill(Node* n) {
    n->prev = nullptr;
    graveyard_.push_back(n);
  }

  /// Drops the index entry for the digram starting at n, if n owns it.
  void forget(Node* n) {
    if (!has_digram(n)) return;
    auto it = index_.find(key(n));
    if (it != index_.end() && it->second == n) index_.erase(it);
  }

  void touch(Node* n) {
    if (!is_guard(n)) pending_.push_back(n);
  }

  void link_after(Node* pos, Node* n) {
    forget(pos);
    n->prev = pos;
    n->next = pos->next;
    pos->next->prev = n;
    pos->next = n;
  }

  void unlink(Node* n) {
    forget(n->prev);
    forget(n);
    n->prev->next = n->next;
    n->next->prev = n->prev;
  }

  void delete_node(Node* n) {
    unlink(n);
    if (n->id < 0) rule(n->id).usage -= n->exp;
    kill(n);
  }

  void set_exp(Node* n, std::uint32_t exp) {
    forget(n->prev);
    forget(n);
    if (n->id < 0) {
      auto& r = rule(n->id);
      r.usage = r.usage - n->exp + exp;
    }
    n->exp = exp;
    touch(n->prev);
    touch(n);
  }

  void drain() {
    while (!pending_.empty()) {
      Node* n = pending_.back();
      pending_.pop_back();
      process(n);
    }
    for (Node* n : graveyard_) free_.push_back(n);
    graveyard_.clear();
  }

  /// Restores local invariants around the digram starting at n: coalesces
  /// equal neighbours, then enforces digram uniqueness.
  void process(Node* n) {
    if (!is_alive(n) || is_guard(n)) return;
    if (!is_guard(n->prev) && n->prev->id == n->id) {
      Node* p = n->prev;
      if (std::uint64_t{p->exp} + n->exp <= UINT32_MAX) {
        auto e = n->exp;
        delete_node(n);
        set_exp(p, p->exp + e);
        return;
      }
    }
    while (!is_guard(n->next) && n->next->id == n->id &&
           std::uint64_t{n->exp} + n->next->exp <= UINT32_MAX) {
      Node* y = n->next;
      auto e = y->exp;
      delete_node(y);
      set_exp(n, n->exp + e);
    }
    if (!has_digram(n) || n->id == n->next->id) return;
    auto [it, inserted] = index_.try_emplace(key(n), n);
    if (inserted || it->second == n) return;
    Node* m = it->second;
    if (m->next == n || n->next == m) return;
    match(n, m);
  }

  void match(Node* ss, Node* m) {
    Rule* r;
    if (is_guard(m->prev) && is_guard(m->next->next) && m->prev->id != kStartRule) {
      r = &rule(m->prev->id);
      substitute(ss, m->prev->id);
    } else {
      auto id = static_cast<std::int32_t>(-static_cast<std::int64_t>(rules_.size()) - 1);
      make_rule(id);
      Node* a = new_node(m->id, m->exp);
      Node* b = new_node(m->next->id, m->next->exp);
      Node* g = rule(id).guard;
      link_after(g, a);
      link_after(a, b);
      substitute(m, id);
      substitute(ss, id);
      index_[key(a)] = a;
      r = &rule(id);
    }
    // Rule utility: a body symbol whose rule is now referenced once is inlined.
    Node* first = r->guard->next;
    Node* second = first->next;
    for (Node* n : {first, second}) {
      if (is_alive(n) && !is_guard(n) && n->id < 0 && rule(n->id).usage == 1) inline_rule(n);
    }
  }

  void substitute(Node* first, std::int32_t rule_id) {
    Node* prev = first->prev;
    Node* second = first->next;
    delete_node(first);
    delete_node(second);
    Node* n = new_node(rule_id, 1);
    link_after(prev, n);
    touch(prev);
    touch(n);
  }

  void inline_rule(Node* ref) {
    Rule& x = rule(ref->id);
    Node* prev = ref->prev;
    Node* next = ref->next;
    Node* body_first = x.guard->next;
    Node* body_last = x.guard->prev;
    forget(prev);
    forget(ref);
    prev->next = body_first;
    body_first->prev = prev;
    body_last->next = next;
    next->prev = body_last;
    x.usage = 0;
    kill(x.guard);
    x.guard = nullptr;
    --live_rules_;
    kill(ref);
    touch(prev);
    touch(body_last);
  }

  std::vector<std::unique_ptr<Node[]>> chunks_;
  std::size_t chunk_size_ = 0;
  std::size_t chunk_used_ = 0;
  std::vector<Node*> free_;
  std::vector<Node*> graveyard_;
  std::vector<Node*> pending_;
  std::vector<Rule> rules_;
  absl::flat_hash_map<DigramKey, Node*, DigramHash> index_;
  std::size_t live_rules_ = 0;
  std::uint64_t length_ = 0;
};

inline Grammar build_grammar(std::span<const std::uint32_t> terminals) {
  SequiturBuilder b;
  for (auto t : terminals) b.append(t);
  return b.snapshot();
}

/// Applies `mapping[old] = new` to every terminal. Injective mappings keep the
/// rule structure; a mapping that merges terminals can break digram
/// uniqueness, so the result is rebuilt from the remapped expansion.
inline Grammar remap_terminals(const Grammar& g, std::span<const std::uint32_t> mapping,
                               std::uint64_t bound = kDefaultExpansionBound) {
  auto used = g.terminals();
  std::unordered_set<std::uint32_t> images;
  bool injective = true;
  for (auto t : used) {
    if (t >= mapping.size()) {
      throw Error(Errc::IncompleteMapping, "no mapping for terminal " + std::to_string(t));
    }
    if (!images.insert(mapping[t]).second) injective = false;
  }
  for (auto t : used) {
    if (mapping[t] > static_cast<std::uint32_t>(INT32_MAX)) {
      throw Error(Errc::IncompleteMapping, "mapped terminal out of range");
    }
  }
  if (!injective) {
    SequiturBuilder b;
    g.for_each_terminal([&](std::uint32_t t) { b.append(mapping[t]); }, bound);
    return b.snapshot();
  }
  Grammar::RuleMap rules;
  for (const auto& [id, body] : g.rules()) {
    Grammar::Body out = body;
    for (auto& sym : out) {
      if (!sym.is_rule()) sym.id = static_cast<std::int32_t>(mapping[static_cast<std::uint32_t>(sym.id)]);
    }
    rules.emplace(id, std::move(out));
  }
  return Grammar(std::move(rules));
}

}  // namespace iotrace
