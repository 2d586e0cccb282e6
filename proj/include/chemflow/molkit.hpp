#pragma once

// Reduced robust molecular grammar, desk-scale property oracles, circular
// fingerprints and corpus generation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chemflow/common.hpp"

namespace chemflow::molkit {

enum class Token : std::uint8_t {
  C, N, O, S, F,
  Double, Triple,
  Branch1, Branch2, Branch3, Branch4,
  Ring1, Ring2, Ring3, Ring4, Ring5, Ring6,
  Pad,
};

inline constexpr int kAlphabetSize = 18;
inline constexpr int kDefaultLength = 24;

std::string_view token_name(Token t);
// Throws IoError on a symbol outside the alphabet.
Token parse_token(std::string_view name);
inline int token_index(Token t) { return static_cast<int>(t); }
inline Token token_from_index(int i) { return static_cast<Token>(i); }

bool is_atom(Token t);
int branch_length(Token t);  // 0 when not a branch token
int ring_index(Token t);     // 0 when not a ring token

struct TokenSequence {
  std::vector<Token> tokens;  // padded length

  static TokenSequence padded(std::vector<Token> toks, int length = kDefaultLength);
  // Tokens before the first Pad.
  std::span<const Token> content() const;
  std::string to_string() const;
  bool operator==(const TokenSequence&) const = default;
};

enum class Element : std::uint8_t { C, N, O, S, F };

int max_valence(Element e);
char element_symbol(Element e);

struct Atom {
  Element element;
  int valence;  // max valence
};

struct Bond {
  int i;
  int j;
  int order;  // 1..3
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  // Size of the smallest cycle closed by each ring-closure bond.
  std::vector<int> ring_sizes;
  int branch_count = 0;
  int longest_cycle = 0;

  int atom_count() const { return static_cast<int>(atoms.size()); }
  int bond_order_sum(int atom) const;
  int double_bond_count() const;
  std::vector<std::vector<std::pair<int, int>>> adjacency() const;  // (neighbor, order)
};

// Total decoding: any token sequence yields a valence-legal connected graph.
//   * bond prefixes (=, #) set the order of the next bond; the order is clipped
//     to the remaining valence of both ends
//   * an atom that cannot bond to a saturated predecessor is skipped
//   * Branch-k decodes the next k tokens as a side chain rooted at the
//     current atom, truncated at the sequence end
//   * Ring-k bonds the current atom to the atom 2k+1 positions earlier in
//     creation order; a missing target, an existing bond or a saturated end
//     makes it a no-op
//   * Pad terminates decoding
MolGraph decode(std::span<const Token> tokens);
inline MolGraph decode(const TokenSequence& seq) { return decode(std::span<const Token>(seq.tokens)); }

// Exact longest simple cycle length (in atoms) by DFS enumeration; 0 if acyclic.
int longest_cycle(const MolGraph& g);

// Weisfeiler-Lehman hash key; identical for isomorphic graphs.
std::string canonical_key(const MolGraph& g);

enum class PropertyKind { LogpLite, SaLite, RingPenalty, Plogp, QedLite };

std::string_view property_name(PropertyKind k);
PropertyKind parse_property(std::string_view name);
inline constexpr std::array<PropertyKind, 5> kAllProperties = {
    PropertyKind::LogpLite, PropertyKind::SaLite, PropertyKind::RingPenalty, PropertyKind::Plogp,
    PropertyKind::QedLite};

struct ComponentStats {
  double mean = 0.0;
  double std = 1.0;
  double zscore(double x) const { return (x - mean) / std; }
};

// Corpus normalization of the three plogp components.
struct NormStats {
  ComponentStats logp_lite;
  ComponentStats sa_lite;
  ComponentStats ring_penalty;
};

double logp_lite(const MolGraph& g);
double sa_lite(const MolGraph& g);
double ring_penalty(const MolGraph& g);
double qed_lite(const MolGraph& g);

// plogp requires stats; throws ConfigError when absent.
double compute_property(PropertyKind kind, const MolGraph& g, const NormStats* stats = nullptr);

struct PropertyValues {
  double logp_lite, sa_lite, ring_penalty, plogp, qed_lite;
  double get(PropertyKind k) const;
};
PropertyValues all_properties(const MolGraph& g, const NormStats& stats);

// Circular environment fingerprint, radii 0..2, folded into `bits` bits.
class Fingerprint {
 public:
  explicit Fingerprint(int bits = 512);
  void set(std::size_t bit);
  bool test(std::size_t bit) const;
  int size() const { return bits_; }
  int count() const;
  int intersection_count(const Fingerprint& other) const;
  int union_count(const Fingerprint& other) const;

 private:
  int bits_;
  std::vector<std::uint64_t> words_;
};

// Canonical environment strings of every atom at radius 0..radius. Neighbor
// descriptors are lexicographically sorted before concatenation.
std::vector<std::string> environment_strings(const MolGraph& g, int radius = 2);
std::uint64_t fnv1a64(std::string_view s);
Fingerprint fingerprint(const MolGraph& g, int bits = 512);
double tanimoto(const Fingerprint& a, const Fingerprint& b);

// Corpus generation ---------------------------------------------------------

// Random corpora concatenate weighted fragments (chains, carbonyls, branches,
// 4/6/8/10-membered rings) until the content length, drawn uniformly from
// [4, max_len], is reached; the last fragment is truncated to fit.
struct CorpusFragment {
  std::vector<Token> tokens;
  double weight;
};
const std::vector<CorpusFragment>& corpus_fragments();

std::vector<TokenSequence> sample_sequences(int n, std::uint64_t seed, int max_len = 20,
                                            int length = kDefaultLength);

// Throws DegenerateError when a component has zero standard deviation.
NormStats compute_stats(std::span<const MolGraph> graphs);

struct CorpusRecord {
  TokenSequence seq;
  PropertyValues props;
};

struct Corpus {
  std::vector<CorpusRecord> records;
  NormStats stats;
  int length = kDefaultLength;
};

Corpus gen_corpus(int n, std::uint64_t seed, int max_len = 20, int length = kDefaultLength);

void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);
void write_stats_json(const NormStats& stats, const std::filesystem::path& path);
NormStats read_stats_json(const std::filesystem::path& path);
// Reads records; tokens are padded to `length`. Recomputes props from stats.
Corpus read_corpus(const std::filesystem::path& jsonl, const std::filesystem::path& stats_json,
                   int length = kDefaultLength);

}  // namespace chemflow::molkit
