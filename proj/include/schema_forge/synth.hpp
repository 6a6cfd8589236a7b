#ifndef SCHEMA_FORGE_SYNTH_HPP
#define SCHEMA_FORGE_SYNTH_HPP

// Deterministic synthetic corpus with gold BIO tags, concepts, intents and
// slots. Utterances are drawn from five intent-role pattern families; each
// role is filled from a per-concept lexicon.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "schema_forge/clustering.hpp"
#include "schema_forge/concepts.hpp"
#include "schema_forge/corpus.hpp"
#include "schema_forge/intent.hpp"
#include "schema_forge/patterns.hpp"

namespace schema_forge {

enum class PatternFamily : std::uint8_t {
  ActionArgument,
  ArgumentQuestion,
  ActionArgumentQuestion,
  ProblemArgument,
  ProblemArgumentQuestion,
};

inline constexpr std::array<PatternFamily, 5> kPatternFamilies = {
    PatternFamily::ActionArgument, PatternFamily::ArgumentQuestion, PatternFamily::ActionArgumentQuestion,
    PatternFamily::ProblemArgument, PatternFamily::ProblemArgumentQuestion};

inline std::string_view family_name(PatternFamily f) {
  switch (f) {
    case PatternFamily::ActionArgument: return "Action-(Argument)";
    case PatternFamily::ArgumentQuestion: return "(Argument)-Question";
    case PatternFamily::ActionArgumentQuestion: return "Action-(Argument)-Question";
    case PatternFamily::ProblemArgument: return "Problem-(Argument)";
    case PatternFamily::ProblemArgumentQuestion: return "Problem-(Argument)-Question";
  }
  return "?";
}

/// Role set of a family with or without its optional Argument.
inline RoleSet family_roles(PatternFamily f, bool with_argument) {
  RoleSet s;
  switch (f) {
    case PatternFamily::ActionArgument: s = {IntentRole::Action}; break;
    case PatternFamily::ArgumentQuestion: s = {IntentRole::Question}; break;
    case PatternFamily::ActionArgumentQuestion: s = {IntentRole::Action, IntentRole::Question}; break;
    case PatternFamily::ProblemArgument: s = {IntentRole::Problem}; break;
    case PatternFamily::ProblemArgumentQuestion: s = {IntentRole::Problem, IntentRole::Question}; break;
  }
  if (with_argument) s.insert(IntentRole::Argument);
  return s;
}

struct ConceptSpec {
  std::string name;
  std::vector<std::string> mentions;
  /// Context words emitted right after this concept's mentions.
  std::vector<std::string> cues;
};

struct SchemaSpec {
  std::array<std::vector<ConceptSpec>, 4> concepts;  // indexed by role
  std::array<double, 5> mixture = {0.3, 0.2, 0.2, 0.2, 0.1};
  /// Tokens used for noise insertion.
  std::vector<std::string> fillers = {"um", "uh", "really", "just", "actually", "kindly"};
  /// Sentences without any mention.
  std::vector<std::string> chitchat = {"hello there", "thanks a lot", "good morning", "ok bye",
                                       "nice to meet you", "have a nice day", "thank you so much", "hi"};
  /// Per mention, probability of inserting a filler token next to it.
  double noise_rate = 0.0;
  /// Fraction of utterances drawn from `chitchat` instead of a pattern family.
  double no_mention_rate = 0.0;
  /// Probability that a family's optional Argument is left out.
  double argument_absent_rate = 0.3;
  /// Probability of a second Argument mention when one is present.
  double extra_argument_rate = 0.15;
  /// Probability of emitting a cue word after a mention.
  double cue_rate = 0.8;
  std::uint64_t seed = 1;

  std::vector<ConceptSpec>& role_concepts(IntentRole r) { return concepts[role_index(r)]; }
  const std::vector<ConceptSpec>& role_concepts(IntentRole r) const { return concepts[role_index(r)]; }

  void validate() const {
    double sum = 0;
    for (double w : mixture) {
      if (w < 0) throw InvalidArgument("synth: negative mixture weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("synth: mixture weights must sum to 1");
    std::set<std::string> seen;
    for (const auto& role : concepts)
      for (const auto& c : role) {
        if (c.mentions.empty()) throw InvalidArgument("synth: concept '" + c.name + "' has no mentions");
        for (const auto& m : c.mentions)
          if (!seen.insert(m).second) throw InvalidArgument("synth: mention '" + m + "' appears in two concepts");
      }
    for (double p : {noise_rate, no_mention_rate, argument_absent_rate, extra_argument_rate, cue_rate})
      if (p < 0 || p > 1) throw InvalidArgument("synth: probabilities must lie in [0, 1]");
  }

  json to_json() const {
    json roles = json::object();
    for (auto r : kAllRoles) {
      json list = json::array();
      for (const auto& c : role_concepts(r)) list.push_back({{"name", c.name}, {"mentions", c.mentions}, {"cues", c.cues}});
      roles[std::string(role_name(r))] = list;
    }
    return {{"concepts", roles},
            {"mixture", mixture},
            {"fillers", fillers},
            {"chitchat", chitchat},
            {"noise_rate", noise_rate},
            {"no_mention_rate", no_mention_rate},
            {"argument_absent_rate", argument_absent_rate},
            {"extra_argument_rate", extra_argument_rate},
            {"cue_rate", cue_rate},
            {"seed", seed}};
  }

  /// Missing fields keep their defaults; `concepts`, when present, replaces
  /// the whole inventory.
  static SchemaSpec from_json(const json& j) {
    SchemaSpec s;
    if (j.contains("concepts")) {
      for (const auto& [k, list] : j["concepts"].items()) {
        auto& dst = s.role_concepts(require_role(k));
        for (const auto& c : list)
          dst.push_back({c.at("name").get<std::string>(), c.at("mentions").get<std::vector<std::string>>(),
                         c.value("cues", std::vector<std::string>{})});
      }
    }
    if (j.contains("mixture")) s.mixture = j["mixture"].get<std::array<double, 5>>();
    s.fillers = j.value("fillers", s.fillers);
    s.chitchat = j.value("chitchat", s.chitchat);
    s.noise_rate = j.value("noise_rate", s.noise_rate);
    s.no_mention_rate = j.value("no_mention_rate", s.no_mention_rate);
    s.argument_absent_rate = j.value("argument_absent_rate", s.argument_absent_rate);
    s.extra_argument_rate = j.value("extra_argument_rate", s.extra_argument_rate);
    s.cue_rate = j.value("cue_rate", s.cue_rate);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
  }

  /// A small finance/service-desk schema in the spirit of the running
  /// examples (Check, Document = {insurance policy, medical certificate, ...},
  /// Loan = {tuition loan, mortgage, ...}).
  static SchemaSpec finance_default() {
    SchemaSpec s;
    auto compose = [](const std::vector<std::string>& mods, const std::vector<std::string>& heads,
                      std::vector<std::string> extra = {}) {
      std::vector<std::string> out;
      for (const auto& m : mods)
        for (const auto& h : heads) out.push_back(m + " " + h);
      out.insert(out.end(), extra.begin(), extra.end());
      return out;
    };
    s.role_concepts(IntentRole::Action) = {
        {"Check", {"check", "view", "see", "review", "inspect", "verify", "look up", "go over"}, {"details", "status"}},
        {"Apply", {"apply for", "request", "sign up for", "register for", "obtain", "order", "open", "get"}, {"online", "today"}},
        {"Cancel", {"cancel", "close", "terminate", "stop", "end", "withdraw", "revoke", "quit"}, {"immediately", "permanently"}},
        {"Pay", {"pay", "repay", "pay off", "settle", "clear", "cover", "finance", "top up"}, {"fully", "early"}},
        {"Update", {"update", "change", "modify", "renew", "edit", "extend", "upgrade", "adjust"}, {"slightly", "shortly"}},
    };
    s.role_concepts(IntentRole::Problem) = {
        {"Lost", {"lost", "misplaced", "cannot find", "forgot", "dropped", "mislaid", "lost track of", "left behind"}, {"somewhere", "yesterday"}},
        {"Refused", {"rejected", "refused", "denied", "declined", "turned down", "disapproved", "blocked", "not approved"}, {"unfairly", "twice"}},
        {"Failed", {"failed", "crashed", "did not work", "broke", "errored", "stopped working", "malfunctioned", "timed out"}, {"suddenly", "repeatedly"}},
        {"Delayed", {"delayed", "late", "postponed", "stuck", "pending", "held up", "slow", "on hold"}, {"still", "forever"}},
    };
    s.role_concepts(IntentRole::Question) = {
        {"Time", {"when", "what time", "how long", "how soon", "what date", "which day", "until when", "by when"}, {"timing", "hours"}},
        {"Method", {"how", "in what way", "by what means", "what steps", "what process", "which procedure", "which method", "how exactly"}, {"guide", "instructions"}},
        {"Reason", {"why", "for what reason", "how come", "what caused", "why exactly", "for which reason", "what made", "what led"}, {"explanation", "justification"}},
        {"Location", {"where", "which branch", "what address", "which office", "what location", "which place", "where exactly", "which city"}, {"nearby", "map"}},
        {"Cost", {"how much", "what price", "what amount", "what cost", "how expensive", "what charge", "what rate", "how pricey"}, {"total", "pricing"}},
    };
    s.role_concepts(IntentRole::Argument) = {
        {"Document",
         compose({"insurance", "medical", "id", "tax", "residence", "employment", "birth", "travel"},
                 {"policy", "certificate", "report", "record", "document", "form"}),
         {"copy", "paperwork"}},
        {"Loan",
         compose({"tuition", "car", "home", "student", "personal", "business", "housing", "auto"},
                 {"loan", "debt", "financing", "advance", "lending", "mortgage"}, {"mortgage"}),
         {"interest", "lender"}},
        {"Account",
         compose({"savings", "checking", "joint", "pension", "salary", "deposit", "retirement", "current"},
                 {"account", "balance", "fund", "wallet", "portfolio", "plan"}),
         {"banking", "holder"}},
        {"Card",
         compose({"credit", "debit", "gold", "platinum", "prepaid", "virtual", "contactless", "rewards"},
                 {"card", "limit", "pin", "chip", "statement", "cashback"}),
         {"swipe", "issuer"}},
        {"Payment",
         compose({"monthly", "weekly", "annual", "quarterly", "daily", "yearly", "biweekly", "semiannual"},
                 {"payment", "installment", "fee", "premium", "contribution", "dues"}),
         {"due", "schedule"}},
    };
    return s;
  }
};

struct GoldMention {
  Mention mention;
  std::string concept_name;
};

struct SynthUtterance {
  AnnotatedUtterance annotated;
  std::optional<PatternFamily> family;  // nullopt for chitchat
  std::vector<GoldMention> mentions;
  RoleConcepts role_concepts;
  std::string intent;
  std::map<std::string, std::vector<std::string>> slots;

  RoleSet role_set() const {
    RoleSet s;
    for (const auto& m : mentions) s.insert(m.mention.role);
    return s;
  }
};

struct SynthCorpus {
  std::vector<SynthUtterance> items;
  std::array<std::size_t, 5> family_counts{};
  std::size_t chitchat_count = 0;

  std::vector<AnnotatedUtterance> annotated() const {
    std::vector<AnnotatedUtterance> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.annotated);
    return out;
  }

  std::vector<Utterance> utterances() const {
    std::vector<Utterance> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.annotated.utterance);
    return out;
  }
};

namespace detail {

class SynthBuilder {
 public:
  SynthBuilder(const SchemaSpec& spec, std::mt19937_64& rng) : spec_(spec), rng_(rng) {}

  bool chance(double p) { return uniform01(rng_) < p; }
  template <class T>
  const T& pick(const std::vector<T>& v) { return v[rng_() % v.size()]; }

  void words(std::string_view text) {
    for (auto& w : split_whitespace(text)) push(w, BioTag::outside());
  }

  void mention(IntentRole role) {
    const auto& concepts = spec_.role_concepts(role);
    if (concepts.empty())
      throw InvalidArgument("synth: no concepts for role " + std::string(role_name(role)));
    const auto& c = pick(concepts);
    const auto& surface = pick(c.mentions);
    if (chance(spec_.noise_rate) && !spec_.fillers.empty()) push(pick(spec_.fillers), BioTag::outside());
    auto toks = split_whitespace(surface);
    std::size_t start = tokens_.size();
    for (std::size_t i = 0; i < toks.size(); ++i)
      push(toks[i], i == 0 ? BioTag::begin(role) : BioTag::inside(role));
    mentions_.push_back({Mention{start, tokens_.size(), role, surface}, c.name});
    if (!c.cues.empty() && chance(spec_.cue_rate)) push(pick(c.cues), BioTag::outside());
  }

  void arguments() {
    mention(IntentRole::Argument);
    if (chance(spec_.extra_argument_rate)) {
      words("and");
      mention(IntentRole::Argument);
    }
  }

  SynthUtterance finish(std::string id, std::optional<PatternFamily> family) {
    SynthUtterance u;
    u.annotated.utterance = Utterance{std::move(id), tokens_, join_tokens(tokens_, 0, tokens_.size()), TokenJoin::Space};
    u.annotated.tags = tags_;
    u.annotated.provenance = Provenance::Gold;
    u.family = family;
    u.mentions = mentions_;
    for (const auto& m : mentions_) {
      u.role_concepts[m.mention.role].push_back(m.concept_name);
      if (m.mention.role == IntentRole::Argument) u.slots[m.concept_name].push_back(m.mention.surface);
    }
    u.intent = canonical_intent(u.role_concepts);
    return u;
  }

 private:
  void push(std::string tok, BioTag t) {
    tokens_.push_back(std::move(tok));
    tags_.push_back(t);
  }

  const SchemaSpec& spec_;
  std::mt19937_64& rng_;
  std::vector<std::string> tokens_;
  TagSequence tags_;
  std::vector<GoldMention> mentions_;
};

}  // namespace detail

/// Generates `n` utterances; identical spec (including seed) gives an
/// identical corpus.
inline SynthCorpus generate(const SchemaSpec& spec, std::size_t n) {
  if (n == 0) throw InvalidArgument("synth: n must be >= 1");
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SynthCorpus out;
  out.items.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    detail::SynthBuilder b(spec, rng);
    std::string id = "s" + std::to_string(k + 1);
    if (!spec.chitchat.empty() && b.chance(spec.no_mention_rate)) {
      b.words(b.pick(spec.chitchat));
      out.items.push_back(b.finish(id, std::nullopt));
      ++out.chitchat_count;
      continue;
    }
    double r = detail::uniform01(rng), acc = 0;
    std::size_t fi = kPatternFamilies.size() - 1;
    for (std::size_t i = 0; i < kPatternFamilies.size(); ++i) {
      acc += spec.mixture[i];
      if (r < acc) {
        fi = i;
        break;
      }
    }
    const auto family = kPatternFamilies[fi];
    const bool with_arg = !b.chance(spec.argument_absent_rate);
    const auto variant = rng() % 3;
    using R = IntentRole;
    switch (family) {
      case PatternFamily::ActionArgument:
        if (!with_arg) {
          b.words(variant == 0 ? "i want to" : variant == 1 ? "please" : "help me");
          b.mention(R::Action);
          if (variant == 1) b.words("now");
        } else if (variant == 0) {
          b.words("please"), b.mention(R::Action), b.arguments();
        } else if (variant == 1) {
          b.words("i want to"), b.mention(R::Action), b.words("my"), b.arguments();
        } else {
          b.words("help me"), b.mention(R::Action), b.words("the"), b.arguments(), b.words("please");
        }
        break;
      case PatternFamily::ArgumentQuestion:
        if (!with_arg) {
          b.mention(R::Question);
          if (variant != 0) b.words("please tell me");
        } else if (variant == 0) {
          b.mention(R::Question), b.words("is my"), b.arguments();
        } else if (variant == 1) {
          b.mention(R::Question), b.words("about the"), b.arguments();
        } else {
          b.words("my"), b.arguments(), b.mention(R::Question);
        }
        break;
      case PatternFamily::ActionArgumentQuestion:
        if (!with_arg) {
          b.mention(R::Question), b.words(variant == 0 ? "to" : "should i"), b.mention(R::Action);
        } else if (variant == 0) {
          b.mention(R::Question), b.words("to"), b.mention(R::Action), b.words("my"), b.arguments();
        } else if (variant == 1) {
          b.mention(R::Question), b.words("should i"), b.mention(R::Action), b.words("the"), b.arguments();
        } else {
          b.words("i want to"), b.mention(R::Action), b.words("my"), b.arguments(), b.mention(R::Question);
        }
        break;
      case PatternFamily::ProblemArgument:
        if (!with_arg) {
          b.words(variant == 0 ? "it" : "everything"), b.mention(R::Problem);
          if (variant == 2) b.words("again");
        } else if (variant == 0) {
          b.words("my"), b.arguments(), b.mention(R::Problem);
        } else if (variant == 1) {
          b.words("the"), b.arguments(), b.words("was"), b.mention(R::Problem), b.words("again");
        } else {
          b.words("i"), b.mention(R::Problem), b.words("my"), b.arguments();
        }
        break;
      case PatternFamily::ProblemArgumentQuestion:
        if (!with_arg) {
          b.mention(R::Question), b.words("it"), b.mention(R::Problem);
        } else if (variant == 0) {
          b.mention(R::Question), b.words("was my"), b.arguments(), b.mention(R::Problem);
        } else if (variant == 1) {
          b.words("my"), b.arguments(), b.mention(R::Problem), b.mention(R::Question);
        } else {
          b.words("the"), b.arguments(), b.words("is"), b.mention(R::Problem), b.words("so"), b.mention(R::Question);
        }
        break;
    }
    out.items.push_back(b.finish(id, family));
    ++out.family_counts[fi];
  }
  return out;
}

/// Gold concept repository holding every lexicon mention of `spec`.
inline ConceptRepository gold_repository(const SchemaSpec& spec) {
  ConceptRepository repo;
  for (auto role : kAllRoles)
    for (const auto& c : spec.role_concepts(role)) repo.add_concept(role, c.name, c.mentions);
  return repo;
}

/// Gold concept name of a normalized mention, per role.
inline std::map<std::pair<IntentRole, std::string>, std::string> gold_concept_index(const SchemaSpec& spec) {
  std::map<std::pair<IntentRole, std::string>, std::string> out;
  for (auto role : kAllRoles)
    for (const auto& c : spec.role_concepts(role))
      for (const auto& m : c.mentions) out[{role, normalize_mention(m)}] = c.name;
  return out;
}

inline json gold_record(const SynthUtterance& u) {
  json mentions = json::array();
  for (const auto& m : u.mentions)
    mentions.push_back({{"surface", m.mention.surface},
                        {"role", std::string(role_name(m.mention.role))},
                        {"span", {m.mention.start, m.mention.end}},
                        {"concept", m.concept_name}});
  return {{"id", u.annotated.utterance.id},
          {"family", u.family ? json(std::string(family_name(*u.family))) : json(nullptr)},
          {"intent", u.intent},
          {"slots", u.slots},
          {"mentions", mentions}};
}

struct SynthFiles {
  std::string corpus = "corpus.jsonl";
  std::string gold_tags = "gold.conll";
  std::string gold_concepts = "gold_concepts.json";
  std::string gold_intents = "gold_intents.jsonl";
};

/// Writes the corpus JSONL, CoNLL gold tags, gold concept repository and gold
/// intent/slot JSONL into `dir`.
inline void write_synth(const std::filesystem::path& dir, const SchemaSpec& spec, const SynthCorpus& corpus,
                        const SynthFiles& names = {}) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw MissingFile((dir / name).string());
    return f;
  };
  {
    auto f = open(names.corpus);
    write_corpus_jsonl(f, corpus.utterances());
  }
  {
    auto f = open(names.gold_tags);
    write_bio(f, corpus.annotated());
  }
  gold_repository(spec).save((dir / names.gold_concepts).string());
  {
    auto f = open(names.gold_intents);
    for (const auto& u : corpus.items) f << gold_record(u).dump() << '\n';
  }
}

}  // namespace schema_forge

#endif
