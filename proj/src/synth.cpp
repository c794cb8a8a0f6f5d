// Copyright 2026 The morphseg Authors. All Rights Reserved.
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

#include "morphseg/synth.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "morphseg/errors.hpp"
#include "morphseg/random.hpp"

namespace morphseg::synth {

namespace {

constexpr std::string_view kRootConsonants = "ptkbdgmnsl";
constexpr std::string_view kVowels = "aeiou";
constexpr std::string_view kSuffixConsonants = "rzvfhjwx";

char Pick(Rng& rng, std::string_view letters) { return letters[rng.Below(letters.size())]; }

std::string MakeRoot(Rng& rng) {
  std::string s;
  s += Pick(rng, kRootConsonants);
  s += Pick(rng, kVowels);
  s += Pick(rng, kRootConsonants);
  s += Pick(rng, kVowels);
  if (rng.Below(2) == 1) s += Pick(rng, kRootConsonants);
  return s;
}

struct Word {
  std::vector<std::string> morphemes;
  std::string Surface() const {
    std::string s;
    for (const auto& m : morphemes) s += m;
    return s;
  }
};

// Every regular word: a root followed by up to two suffixes in slot order.
std::vector<Word> AllRegularWords(const Lexicon& lex) {
  std::vector<Word> out;
  const std::size_t n = lex.suffixes.size();
  for (const auto& r : lex.roots) {
    out.push_back({{r}});
    for (std::size_t a = 0; a < n; ++a) {
      out.push_back({{r, lex.suffixes[a]}});
      for (std::size_t b = a + 1; b < n; ++b) out.push_back({{r, lex.suffixes[a], lex.suffixes[b]}});
    }
  }
  return out;
}

bool Consistent(const Lexicon& lex, const std::set<std::string>& function_words) {
  std::map<std::string, std::vector<std::string>> seen;
  for (const Word& w : AllRegularWords(lex)) {
    const auto [it, inserted] = seen.emplace(w.Surface(), w.morphemes);
    if (!inserted && it->second != w.morphemes) return false;
  }
  for (const auto& f : function_words) {
    if (seen.contains(f)) return false;
  }
  // The whole-word readings must not coincide with any other regular analysis.
  for (const auto& form : lex.forms) {
    const auto it = seen.find(form.surface);
    if (it == seen.end() || it->second != std::vector<std::string>{form.stem, form.suffix}) {
      return false;
    }
  }
  return true;
}

Lexicon MakeLexicon(const SynthConfig& c, Rng& rng) {
  if (c.suffixes > kVowels.size() * kSuffixConsonants.size()) {
    throw ArgumentError("synth: too many suffixes requested");
  }
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Lexicon lex;
    std::set<std::string> roots;
    while (roots.size() < c.roots) roots.insert(MakeRoot(rng));
    lex.roots.assign(roots.begin(), roots.end());
    rng.Shuffle(std::span<std::string>(lex.roots));
    std::set<std::string> suffixes;
    while (suffixes.size() < c.suffixes) {
      std::string s;
      s += Pick(rng, kVowels);
      s += Pick(rng, kSuffixConsonants);
      suffixes.insert(s);
    }
    lex.suffixes.assign(suffixes.begin(), suffixes.end());
    rng.Shuffle(std::span<std::string>(lex.suffixes));

    std::set<std::string> function_words;
    while (function_words.size() < 2 * c.ambiguous) {
      std::string w;
      w += Pick(rng, kRootConsonants);
      w += Pick(rng, kVowels);
      function_words.insert(w);
    }
    std::vector<std::string> fw(function_words.begin(), function_words.end());
    rng.Shuffle(std::span<std::string>(fw));
    for (std::size_t i = 0; i < c.ambiguous; ++i) {
      AmbiguousForm f;
      f.stem = lex.roots[i];
      f.suffix = lex.suffixes[rng.Below(lex.suffixes.size())];
      f.surface = f.stem + f.suffix;
      f.whole_context = fw[2 * i];
      f.split_context = fw[2 * i + 1];
      lex.forms.push_back(f);
    }
    if (Consistent(lex, function_words)) return lex;
  }
  throw ArgumentError("synth: could not build a collision-free lexicon");
}

Word RandomRegular(const Lexicon& lex, Rng& rng, const std::set<std::string>& banned) {
  while (true) {
    Word w{{lex.roots[rng.Below(lex.roots.size())]}};
    const std::uint64_t draw = rng.Below(20);
    const std::size_t k = draw < 6 ? 0 : (draw < 15 ? 1 : 2);
    std::vector<std::size_t> slots;
    while (slots.size() < k) {
      const std::size_t s = rng.Below(lex.suffixes.size());
      if (std::find(slots.begin(), slots.end(), s) == slots.end()) slots.push_back(s);
    }
    std::sort(slots.begin(), slots.end());
    for (std::size_t s : slots) w.morphemes.push_back(lex.suffixes[s]);
    if (!banned.contains(w.Surface())) return w;
  }
}

corpus::SentencePair Render(const std::vector<Word>& words, const std::string& language) {
  std::string source, target;
  for (const Word& w : words) {
    if (!source.empty()) {
      source += ' ';
      target += ' ';
    }
    source += w.Surface();
    for (std::size_t m = 0; m < w.morphemes.size(); ++m) {
      if (m > 0) target += " @@";
      target += w.morphemes[m];
    }
  }
  return corpus::MakePair(source, target, language);
}

corpus::Dataset MakeSplit(const SynthConfig& c, const Lexicon& lex, Rng& rng, std::size_t count,
                          const std::string& name,
                          std::vector<AmbiguousOccurrence>* occurrences) {
  std::set<std::string> banned;
  for (const auto& f : lex.forms) banned.insert(f.surface);
  // Balanced (form, reading) assignments in shuffled order.
  std::vector<std::pair<std::size_t, bool>> plan;
  for (std::size_t i = 0; i < count; ++i) {
    plan.emplace_back(i % c.ambiguous, (i / c.ambiguous) % 2 == 1);
  }
  rng.Shuffle(std::span<std::pair<std::size_t, bool>>(plan));

  corpus::Dataset d;
  d.provenance = name;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t n =
        c.min_words + static_cast<std::size_t>(rng.Below(c.max_words - c.min_words + 1));
    std::vector<Word> words;
    for (std::size_t k = 0; k + 2 < std::max<std::size_t>(n, 3); ++k) {
      words.push_back(RandomRegular(lex, rng, banned));
    }
    const auto [form_index, split] = plan[i];
    const AmbiguousForm& form = lex.forms[form_index];
    const std::size_t at = static_cast<std::size_t>(rng.Below(words.size() + 1));
    Word context{{split ? form.split_context : form.whole_context}};
    Word target = split ? Word{{form.stem, form.suffix}} : Word{{form.surface}};
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), {context, target});
    if (occurrences != nullptr) occurrences->push_back({i, at + 1, form_index, split});
    d.pairs.push_back(Render(words, c.language));
  }
  return d;
}

}  // namespace

SynthCorpus Generate(const SynthConfig& c) {
  if (c.roots < c.ambiguous || c.ambiguous == 0 || c.suffixes == 0) {
    throw ArgumentError("synth: need 1 <= ambiguous <= roots and at least one suffix");
  }
  if (c.min_words < 3 || c.max_words < c.min_words) {
    throw ArgumentError("synth: need 3 <= min_words <= max_words");
  }
  Rng rng(c.seed);
  SynthCorpus out;
  out.lexicon = MakeLexicon(c, rng);
  out.train = MakeSplit(c, out.lexicon, rng, c.train, "synthetic-train", nullptr);
  out.dev = MakeSplit(c, out.lexicon, rng, c.dev, "synthetic-dev", nullptr);
  out.test = MakeSplit(c, out.lexicon, rng, c.test, "synthetic-test", &out.test_occurrences);

  std::set<std::string> banned;
  for (const auto& f : out.lexicon.forms) banned.insert(f.surface);
  const std::size_t available = AllRegularWords(out.lexicon).size() - banned.size();
  std::set<std::string> used;
  out.words.provenance = "synthetic-words";
  while (out.words.size() < std::min(c.words, available)) {
    const Word w = RandomRegular(out.lexicon, rng, banned);
    if (!used.insert(w.Surface()).second) continue;
    out.words.pairs.push_back(Render({w}, c.language));
  }
  return out;
}

}  // namespace morphseg::synth
