#include "cmwm/corpusgen.hpp"

#include <vector>

#include "cmwm/rng.hpp"

namespace cmwm {

const char* kCorpusAnchorSentence = "the quiet courier delivered the sealed letter .";

namespace {

const char* kSubjects[] = {
    "engineer", "pilot",    "farmer",   "painter",  "teacher",  "sailor",
    "doctor",   "baker",    "writer",   "gardener", "mechanic", "clerk",
    "guard",    "merchant", "student",  "chemist",  "hunter",   "tailor",
    "mason",    "builder",  "plumber",  "violinist", "scout",   "ranger",
    "judge",    "captain",  "smith",    "weaver",   "miller",   "porter",
    "nurse",    "archer",   "singer",   "dancer",   "keeper",   "courier",
    "trader",   "printer",  "founder",  "surveyor", "diver",    "skipper",
    "climber",  "sheriff",  "banker",   "butcher",  "carver",   "drummer"};

const char* kVerbs[] = {
    "repaired",  "painted",  "carried",   "examined", "finished", "opened",
    "cleaned",   "measured", "collected", "counted",  "borrowed", "returned",
    "built",     "sketched", "planted",   "watered",  "folded",   "wrapped",
    "delivered", "tested",   "sharpened", "polished", "stacked",  "sorted",
    "lifted",    "moved",    "covered",   "labeled",  "weighed",  "sealed",
    "traded",    "guarded",  "followed",  "noticed",  "ignored",  "praised",
    "studied",   "copied",   "signed",    "mailed",   "loaded",   "unpacked",
    "arranged",  "balanced", "repainted", "restored", "adjusted", "tightened"};

const char* kObjects[] = {
    "engine",  "ladder",   "letter",  "basket",  "table",   "mirror",
    "window",  "bridge",   "canvas",  "bottle",  "lantern", "barrel",
    "wagon",   "anchor",   "compass", "journal", "ledger",  "parcel",
    "crate",   "hammer",   "kettle",  "carpet",  "curtain", "shelf",
    "clock",   "bell",     "rope",    "sail",    "wheel",   "fence",
    "gate",    "garden",   "machine", "violin",  "drum",    "portrait",
    "map",     "telescope", "statue", "fountain", "furnace", "chimney",
    "saddle",  "harness",  "netting", "pulley",  "beacon",  "turbine"};

const char* kAdjectives[] = {
    "old",     "new",     "heavy",  "light",   "bright", "quiet",
    "rusty",   "wooden",  "copper", "narrow",  "wide",   "broken",
    "steady",  "crooked", "smooth", "rough",   "tall",   "short",
    "clever",  "careful", "tired",  "eager",   "patient", "curious",
    "sturdy",  "fragile", "warm",   "cold",    "plain",  "fancy",
    "silver",  "golden",  "pale",   "dusty",   "clean",  "spare"};

const char* kAdverbs[] = {"quickly",  "slowly",    "carefully", "quietly",
                          "early",    "late",      "twice",     "again",
                          "together", "alone",     "outside",   "inside",
                          "upstairs", "yesterday", "today",     "tonight"};

const char* kPlaces[] = {"harbor",  "market",  "village", "station", "mill",
                         "orchard", "meadow",  "library", "workshop", "tower",
                         "cellar",  "attic",   "court",   "square",  "dock",
                         "field",   "forge",   "inn",     "chapel",  "barn"};

template <size_t N>
const char* pick(const char* (&pool)[N], SplitRng& rng) {
  return pool[rng.below(N)];
}

std::string make_sentence(SplitRng& rng) {
  std::string s;
  const int form = static_cast<int>(rng.below(8));
  auto det = [&] { return rng.bernoulli(0.8) ? "the" : "a"; };
  switch (form) {
    case 0:
      s = std::string(det()) + " " + pick(kAdjectives, rng) + " " +
          pick(kSubjects, rng) + " " + pick(kVerbs, rng) + " " + det() + " " +
          pick(kObjects, rng) + " .";
      break;
    case 1:
      s = std::string(det()) + " " + pick(kSubjects, rng) + " " +
          pick(kVerbs, rng) + " " + det() + " " + pick(kObjects, rng) + " " +
          pick(kAdverbs, rng) + " .";
      break;
    case 2:
      s = std::string(det()) + " " + pick(kSubjects, rng) + " " +
          pick(kVerbs, rng) + " " + det() + " " + pick(kAdjectives, rng) + " " +
          pick(kObjects, rng) + " near the " + pick(kPlaces, rng) + " .";
      break;
    case 3:
      s = std::string(det()) + " " + pick(kSubjects, rng) + " and " + det() +
          " " + pick(kSubjects, rng) + " " + pick(kVerbs, rng) + " " + det() +
          " " + pick(kObjects, rng) + " .";
      break;
    case 4:
      s = std::string(det()) + " " + pick(kSubjects, rng) + " " +
          pick(kVerbs, rng) + " " + pick(kAdverbs, rng) + " !";
      break;
    case 5:
      s = std::string("did ") + det() + " " + pick(kSubjects, rng) + " " +
          pick(kVerbs, rng) + " " + det() + " " + pick(kObjects, rng) + " ?";
      break;
    case 6:
      s = std::string(det()) + " " + pick(kSubjects, rng) + " " +
          pick(kVerbs, rng) + " " + det() + " " + pick(kObjects, rng) +
          " , and " + det() + " " + pick(kSubjects, rng) + " " +
          pick(kVerbs, rng) + " " + det() + " " + pick(kObjects, rng) + " .";
      break;
    default:
      s = std::string(det()) + " " + pick(kAdjectives, rng) + " " +
          pick(kSubjects, rng) + " " + pick(kVerbs, rng) + " near the " +
          pick(kPlaces, rng) + " .";
      break;
  }
  return s;
}

}  // namespace

std::string generate_corpus(uint64_t target_bytes, uint64_t seed) {
  SplitRng rng = SplitRng(seed).split("corpus");
  std::string out;
  out.reserve(target_bytes + 1024);
  while (out.size() < target_bytes) {
    out += kCorpusAnchorSentence;
    const int sentences = 5 + static_cast<int>(rng.below(5));
    for (int s = 0; s < sentences; ++s) {
      out += ' ';
      out += make_sentence(rng);
    }
    out += "\n\n";
  }
  return out;
}

}  // namespace cmwm
