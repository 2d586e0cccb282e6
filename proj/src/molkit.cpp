#include "chemflow/molkit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace chemflow::molkit {

namespace {

constexpr std::array<std::string_view, kAlphabetSize> kTokenNames = {
    "C",       "N",       "O",       "S",     "F",     "=",     "#",     "Branch1", "Branch2",
    "Branch3", "Branch4", "Ring1",   "Ring2", "Ring3", "Ring4", "Ring5", "Ring6",   "PAD",
};

// logp_lite atom contributions, indexed by Element.
constexpr std::array<double, 5> kLogpContribution = {0.2, -0.3, -0.4, 0.1, 0.0};
constexpr double kLogpPerDoubleBond = 0.1;

Element element_of(Token t) { return static_cast<Element>(static_cast<int>(t)); }

class Decoder {
 public:
  explicit Decoder(std::span<const Token> tokens) : tokens_(tokens) {}

  MolGraph run() {
    std::size_t pos = 0;
    int cur = -1;
    decode_range(pos, tokens_.size(), cur);
    graph_.longest_cycle = longest_cycle(graph_);
    return std::move(graph_);
  }

 private:
  void decode_range(std::size_t& pos, std::size_t end, int& cur) {
    while (pos < end && !terminated_) {
      const Token t = tokens_[pos++];
      if (t == Token::Pad) {
        terminated_ = true;
        return;
      }
      if (is_atom(t)) {
        add_atom(element_of(t), cur);
      } else if (t == Token::Double) {
        pending_ = 2;
      } else if (t == Token::Triple) {
        pending_ = 3;
      } else if (const int k = branch_length(t); k > 0) {
        const std::size_t stop = std::min(pos + static_cast<std::size_t>(k), end);
        if (cur < 0) {
          // nothing to hang the branch on: its content continues the main chain
          decode_range(pos, stop, cur);
        } else {
          int root = cur;
          const int before = graph_.atom_count();
          decode_range(pos, stop, root);
          if (graph_.atom_count() > before) ++graph_.branch_count;
        }
        pos = std::max(pos, stop);
        pending_ = 1;
      } else if (const int r = ring_index(t); r > 0) {
        close_ring(cur, cur - (2 * r + 1));
        pending_ = 1;
      }
    }
  }

  void add_atom(Element e, int& cur) {
    const int valence = max_valence(e);
    if (cur < 0) {
      graph_.atoms.push_back({e, valence});
      remaining_.push_back(valence);
      cur = graph_.atom_count() - 1;
      pending_ = 1;
      return;
    }
    const int order = std::min({pending_, remaining_[cur], valence});
    pending_ = 1;
    if (order == 0) return;  // saturated predecessor: atom skipped
    graph_.atoms.push_back({e, valence});
    remaining_.push_back(valence - order);
    const int idx = graph_.atom_count() - 1;
    remaining_[cur] -= order;
    graph_.bonds.push_back({cur, idx, order});
    cur = idx;
  }

  void close_ring(int cur, int target) {
    if (cur < 0 || target < 0) return;
    for (const Bond& b : graph_.bonds)
      if ((b.i == target && b.j == cur) || (b.i == cur && b.j == target)) return;
    const int order = std::min({pending_, remaining_[cur], remaining_[target]});
    if (order == 0) return;
    const int path = shortest_path(target, cur);
    graph_.bonds.push_back({target, cur, order});
    remaining_[cur] -= order;
    remaining_[target] -= order;
    graph_.ring_sizes.push_back(path + 1);
  }

  int shortest_path(int from, int to) const {
    const auto adj = graph_.adjacency();
    std::vector<int> dist(adj.size(), -1);
    std::deque<int> queue{from};
    dist[from] = 0;
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      if (u == to) return dist[u];
      for (auto [v, order] : adj[u]) {
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          queue.push_back(v);
        }
      }
    }
    return 0;  // unreachable: the graph is connected
  }

  std::span<const Token> tokens_;
  MolGraph graph_;
  std::vector<int> remaining_;
  int pending_ = 1;
  bool terminated_ = false;
};

void longest_cycle_dfs(const std::vector<std::vector<std::pair<int, int>>>& adj, int start, int u,
                       int depth, std::vector<char>& on_path, int& best) {
  for (auto [v, order] : adj[u]) {
    if (v == start && depth >= 3) {
      best = std::max(best, depth);
    } else if (v > start && !on_path[v]) {
      on_path[v] = 1;
      longest_cycle_dfs(adj, start, v, depth + 1, on_path, best);
      on_path[v] = 0;
    }
  }
}

std::string atom_descriptor(const MolGraph& g, int a, const std::vector<std::vector<std::pair<int, int>>>& adj) {
  const int bond_sum = g.bond_order_sum(a);
  std::string s = "[";
  s += element_symbol(g.atoms[a].element);
  s += ";d" + std::to_string(adj[a].size());
  s += ";h" + std::to_string(g.atoms[a].valence - bond_sum);
  s += "]";
  return s;
}

char bond_symbol(int order) { return order == 1 ? '-' : order == 2 ? '=' : '#'; }

}  // namespace

std::string_view token_name(Token t) { return kTokenNames[token_index(t)]; }

Token parse_token(std::string_view name) {
  for (int i = 0; i < kAlphabetSize; ++i)
    if (kTokenNames[i] == name) return token_from_index(i);
  throw IoError("unknown token symbol '" + std::string(name) + "'");
}

bool is_atom(Token t) { return token_index(t) <= token_index(Token::F); }

int branch_length(Token t) {
  const int i = token_index(t) - token_index(Token::Branch1);
  return (i >= 0 && i < 4) ? i + 1 : 0;
}

int ring_index(Token t) {
  const int i = token_index(t) - token_index(Token::Ring1);
  return (i >= 0 && i < 6) ? i + 1 : 0;
}

TokenSequence TokenSequence::padded(std::vector<Token> toks, int length) {
  if (static_cast<int>(toks.size()) > length) toks.resize(length);
  toks.resize(length, Token::Pad);
  return TokenSequence{std::move(toks)};
}

std::span<const Token> TokenSequence::content() const {
  const auto it = std::find(tokens.begin(), tokens.end(), Token::Pad);
  return {tokens.data(), static_cast<std::size_t>(it - tokens.begin())};
}

std::string TokenSequence::to_string() const {
  std::string out;
  for (Token t : content()) {
    out += '[';
    out += token_name(t);
    out += ']';
  }
  return out;
}

int max_valence(Element e) {
  static constexpr std::array<int, 5> kValence = {4, 3, 2, 2, 1};
  return kValence[static_cast<int>(e)];
}

char element_symbol(Element e) { return "CNOSF"[static_cast<int>(e)]; }

int MolGraph::bond_order_sum(int atom) const {
  int sum = 0;
  for (const Bond& b : bonds)
    if (b.i == atom || b.j == atom) sum += b.order;
  return sum;
}

int MolGraph::double_bond_count() const {
  return static_cast<int>(std::count_if(bonds.begin(), bonds.end(), [](const Bond& b) { return b.order == 2; }));
}

std::vector<std::vector<std::pair<int, int>>> MolGraph::adjacency() const {
  std::vector<std::vector<std::pair<int, int>>> adj(atoms.size());
  for (const Bond& b : bonds) {
    adj[b.i].emplace_back(b.j, b.order);
    adj[b.j].emplace_back(b.i, b.order);
  }
  return adj;
}

MolGraph decode(std::span<const Token> tokens) { return Decoder(tokens).run(); }

int longest_cycle(const MolGraph& g) {
  const auto adj = g.adjacency();
  const int n = g.atom_count();
  int best = 0;
  std::vector<char> on_path(n, 0);
  for (int s = 0; s < n; ++s) {
    on_path[s] = 1;
    longest_cycle_dfs(adj, s, s, 1, on_path, best);
    on_path[s] = 0;
  }
  return best;
}

std::string canonical_key(const MolGraph& g) {
  const auto adj = g.adjacency();
  const int n = g.atom_count();
  std::vector<std::uint64_t> label(n);
  for (int a = 0; a < n; ++a) label[a] = fnv1a64(atom_descriptor(g, a, adj));
  for (int round = 0; round < std::min(n, 8); ++round) {
    std::vector<std::uint64_t> next(n);
    for (int a = 0; a < n; ++a) {
      std::vector<std::uint64_t> nb;
      for (auto [v, order] : adj[a]) nb.push_back(label[v] * 4 + static_cast<std::uint64_t>(order));
      std::sort(nb.begin(), nb.end());
      std::string buf = std::to_string(label[a]);
      for (auto x : nb) buf += "," + std::to_string(x);
      next[a] = fnv1a64(buf);
    }
    label = std::move(next);
  }
  std::sort(label.begin(), label.end());
  std::ostringstream out;
  out << n << ':' << g.bonds.size();
  for (auto x : label) out << ':' << std::hex << x;
  return out.str();
}

std::string_view property_name(PropertyKind k) {
  switch (k) {
    case PropertyKind::LogpLite: return "logp_lite";
    case PropertyKind::SaLite: return "sa_lite";
    case PropertyKind::RingPenalty: return "ring_penalty";
    case PropertyKind::Plogp: return "plogp";
    case PropertyKind::QedLite: return "qed_lite";
  }
  return "?";
}

PropertyKind parse_property(std::string_view name) {
  for (PropertyKind k : kAllProperties)
    if (property_name(k) == name) return k;
  throw ConfigError("unknown property '" + std::string(name) + "'");
}

double logp_lite(const MolGraph& g) {
  double sum = 0.0;
  for (const Atom& a : g.atoms) sum += kLogpContribution[static_cast<int>(a.element)];
  return sum + kLogpPerDoubleBond * g.double_bond_count();
}

double sa_lite(const MolGraph& g) {
  double ring_excess = 0.0;
  for (int size : g.ring_sizes) ring_excess += std::max(0, size - 6);
  const double raw = 1.0 + 0.5 * g.branch_count + ring_excess + 0.05 * g.atom_count();
  return std::clamp(raw, 1.0, 10.0);
}

double ring_penalty(const MolGraph& g) { return std::max(0, g.longest_cycle - 6); }

double qed_lite(const MolGraph& g) {
  const double da = g.atom_count() - 12.0;
  const double dl = logp_lite(g) - 1.0;
  return std::exp(-da * da / 50.0) * std::exp(-dl * dl / 2.0);
}

double compute_property(PropertyKind kind, const MolGraph& g, const NormStats* stats) {
  switch (kind) {
    case PropertyKind::LogpLite: return logp_lite(g);
    case PropertyKind::SaLite: return sa_lite(g);
    case PropertyKind::RingPenalty: return ring_penalty(g);
    case PropertyKind::QedLite: return qed_lite(g);
    case PropertyKind::Plogp:
      if (stats == nullptr) throw ConfigError("plogp requires corpus normalization stats");
      return stats->logp_lite.zscore(logp_lite(g)) - stats->sa_lite.zscore(sa_lite(g)) -
             stats->ring_penalty.zscore(ring_penalty(g));
  }
  return 0.0;
}

double PropertyValues::get(PropertyKind k) const {
  switch (k) {
    case PropertyKind::LogpLite: return logp_lite;
    case PropertyKind::SaLite: return sa_lite;
    case PropertyKind::RingPenalty: return ring_penalty;
    case PropertyKind::Plogp: return plogp;
    case PropertyKind::QedLite: return qed_lite;
  }
  return 0.0;
}

PropertyValues all_properties(const MolGraph& g, const NormStats& stats) {
  return {molkit::logp_lite(g), molkit::sa_lite(g), molkit::ring_penalty(g),
          compute_property(PropertyKind::Plogp, g, &stats), molkit::qed_lite(g)};
}

// Fingerprints ---------------------------------------------------------------

Fingerprint::Fingerprint(int bits) : bits_(bits), words_((bits + 63) / 64, 0) {
  if (bits <= 0) throw ArgumentError("fingerprint size must be positive");
}

void Fingerprint::set(std::size_t bit) { words_[bit / 64] |= (std::uint64_t{1} << (bit % 64)); }

bool Fingerprint::test(std::size_t bit) const { return (words_[bit / 64] >> (bit % 64)) & 1U; }

int Fingerprint::count() const {
  int c = 0;
  for (auto w : words_) c += std::popcount(w);
  return c;
}

int Fingerprint::intersection_count(const Fingerprint& other) const {
  if (other.bits_ != bits_) throw ArgumentError("fingerprint sizes differ");
  int c = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) c += std::popcount(words_[i] & other.words_[i]);
  return c;
}

int Fingerprint::union_count(const Fingerprint& other) const {
  if (other.bits_ != bits_) throw ArgumentError("fingerprint sizes differ");
  int c = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) c += std::popcount(words_[i] | other.words_[i]);
  return c;
}

std::vector<std::string> environment_strings(const MolGraph& g, int radius) {
  const auto adj = g.adjacency();
  const int n = g.atom_count();
  std::vector<std::string> env(n);
  for (int a = 0; a < n; ++a) env[a] = atom_descriptor(g, a, adj);
  std::vector<std::string> out = env;
  for (int r = 1; r <= radius; ++r) {
    std::vector<std::string> next(n);
    for (int a = 0; a < n; ++a) {
      std::vector<std::string> nb;
      for (auto [v, order] : adj[a]) nb.push_back(bond_symbol(order) + env[v]);
      std::sort(nb.begin(), nb.end());
      std::string s = "(" + env[a] + ":";
      for (std::size_t i = 0; i < nb.size(); ++i) s += (i ? "," : "") + nb[i];
      next[a] = s + ")";
    }
    env = std::move(next);
    out.insert(out.end(), env.begin(), env.end());
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Fingerprint fingerprint(const MolGraph& g, int bits) {
  Fingerprint fp(bits);
  for (const std::string& s : environment_strings(g, 2)) {
    const std::uint64_t h = fnv1a64(s);
    fp.set(static_cast<std::size_t>((h ^ (h >> 32)) % static_cast<std::uint64_t>(bits)));
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  const int uni = a.union_count(b);
  if (uni == 0) return 1.0;
  return static_cast<double>(a.intersection_count(b)) / uni;
}

// Corpus -----------------------------------------------------------------------

const std::vector<CorpusFragment>& corpus_fragments() {
  using T = Token;
  static const std::vector<CorpusFragment> kFragments = {
      {{T::C}, 0.20},
      {{T::C, T::C}, 0.10},
      {{T::N}, 0.06},
      {{T::O}, 0.06},
      {{T::S}, 0.02},
      {{T::F}, 0.03},
      {{T::Double, T::O}, 0.05},
      {{T::C, T::Double, T::C}, 0.05},
      {{T::C, T::Triple, T::N}, 0.02},
      {{T::Branch1, T::C}, 0.05},
      {{T::Branch1, T::O}, 0.03},
      {{T::Branch2, T::C, T::N}, 0.03},
      {{T::Branch3, T::C, T::C, T::O}, 0.02},
      {{T::C, T::C, T::C, T::Ring1}, 0.03},
      {{T::C, T::C, T::C, T::C, T::C, T::C, T::Ring2}, 0.07},
      {{T::C, T::C, T::N, T::C, T::C, T::C, T::Ring2}, 0.03},
      {{T::C, T::C, T::C, T::C, T::C, T::C, T::C, T::C, T::Ring3}, 0.03},
      {{T::C, T::C, T::C, T::C, T::C, T::C, T::C, T::C, T::C, T::C, T::Ring4}, 0.02},
  };
  return kFragments;
}

std::vector<TokenSequence> sample_sequences(int n, std::uint64_t seed, int max_len, int length) {
  if (n < 1) throw ArgumentError("corpus size must be >= 1");
  if (max_len < 4 || max_len > length) throw ArgumentError("max_len must lie in [4, length]");
  Rng rng = make_rng(seed, 0);
  const auto& frags = corpus_fragments();
  std::vector<double> w;
  for (const auto& f : frags) w.push_back(f.weight);
  std::discrete_distribution<std::size_t> frag_dist(w.begin(), w.end());
  std::uniform_int_distribution<int> len_dist(4, max_len);
  std::vector<TokenSequence> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const std::size_t len = static_cast<std::size_t>(len_dist(rng));
    std::vector<Token> toks;
    while (toks.size() < len) {
      const auto& f = frags[frag_dist(rng)].tokens;
      toks.insert(toks.end(), f.begin(), f.end());
    }
    toks.resize(len);
    out.push_back(TokenSequence::padded(std::move(toks), length));
  }
  return out;
}

NormStats compute_stats(std::span<const MolGraph> graphs) {
  auto stat = [&](auto&& f, const char* name) {
    const double n = static_cast<double>(graphs.size());
    double mean = 0.0;
    for (const MolGraph& g : graphs) mean += f(g);
    mean /= n;
    double var = 0.0;
    for (const MolGraph& g : graphs) var += (f(g) - mean) * (f(g) - mean);
    var /= n;
    if (!(var > 0.0)) throw DegenerateError(std::string("degenerate corpus: zero std for ") + name);
    return ComponentStats{mean, std::sqrt(var)};
  };
  return {stat(molkit::logp_lite, "logp_lite"), stat(molkit::sa_lite, "sa_lite"),
          stat(molkit::ring_penalty, "ring_penalty")};
}

Corpus gen_corpus(int n, std::uint64_t seed, int max_len, int length) {
  auto seqs = sample_sequences(n, seed, max_len, length);
  std::vector<MolGraph> graphs;
  graphs.reserve(seqs.size());
  for (const auto& s : seqs) graphs.push_back(decode(s));
  Corpus corpus;
  corpus.length = length;
  corpus.stats = compute_stats(graphs);
  corpus.records.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i)
    corpus.records.push_back({std::move(seqs[i]), all_properties(graphs[i], corpus.stats)});
  return corpus;
}

namespace {

nlohmann::json stats_to_json(const NormStats& s) {
  auto c = [](const ComponentStats& x) { return nlohmann::json{{"mean", x.mean}, {"std", x.std}}; };
  return {{"logp_lite", c(s.logp_lite)}, {"sa_lite", c(s.sa_lite)}, {"ring_penalty", c(s.ring_penalty)}};
}

}  // namespace

void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& rec : corpus.records) {
    nlohmann::json toks = nlohmann::json::array();
    for (Token t : rec.seq.content()) toks.push_back(std::string(token_name(t)));
    nlohmann::json props;
    for (PropertyKind k : kAllProperties) props[std::string(property_name(k))] = rec.props.get(k);
    out << nlohmann::json{{"tokens", toks}, {"props", props}}.dump() << '\n';
  }
}

void write_stats_json(const NormStats& stats, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << stats_to_json(stats).dump(2) << '\n';
}

NormStats read_stats_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    auto c = [&](const char* key) {
      return ComponentStats{j.at(key).at("mean").get<double>(), j.at(key).at("std").get<double>()};
    };
    return {c("logp_lite"), c("sa_lite"), c("ring_penalty")};
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed stats file " + path.string() + ": " + e.what());
  }
}

Corpus read_corpus(const std::filesystem::path& jsonl, const std::filesystem::path& stats_json, int length) {
  Corpus corpus;
  corpus.length = length;
  corpus.stats = read_stats_json(stats_json);
  std::ifstream in(jsonl);
  if (!in) throw IoError("cannot read " + jsonl.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<Token> toks;
    try {
      const auto rec = nlohmann::json::parse(line);
      for (const auto& t : rec.at("tokens")) toks.push_back(parse_token(t.get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto seq = TokenSequence::padded(std::move(toks), length);
    const auto g = decode(seq);
    corpus.records.push_back({std::move(seq), all_properties(g, corpus.stats)});
  }
  return corpus;
}

}  // namespace chemflow::molkit
