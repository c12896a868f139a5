#include "cnseg/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <numeric>

#include "cnseg/error.hpp"

namespace cnseg {

namespace {

const std::map<std::string, std::vector<std::string>>& phrase_banks() {
  static const std::map<std::string, std::vector<std::string>> banks = {
      {"OTHER",
       {"Name ___ Unit No ___", "Admission Date ___ Discharge Date ___", "Date of Birth ___",
        "___ Medical Center", "Completed by ___"}},
      {"SEX", {"M", "F", "male", "female"}},
      {"SERVICE", {"MEDICINE", "SURGERY", "CARDIOTHORACIC", "NEUROLOGY", "ORTHOPAEDICS"}},
      {"ALLERGIES",
       {"No Known Allergies / Adverse Drug Reactions", "Penicillins", "Sulfa (Sulfonamide Antibiotics)",
        "Codeine causes nausea", "Iodine contrast reaction with hives"}},
      {"ATTENDING", {"___ MD", "___ ___ M.D.", "Dr. ___"}},
      {"CHIEF COMPLAINT",
       {"chest pain", "shortness of breath", "abdominal pain", "fever and chills", "syncope",
        "altered mental status"}},
      {"MAJOR SURGICAL OR INVASIVE PROCEDURE",
       {"None", "cardiac catheterization with stent placement", "laparoscopic cholecystectomy",
        "paracentesis", "bronchoscopy with biopsy"}},
      {"HISTORY OF PRESENT ILLNESS",
       {"patient presented to the emergency department after sudden onset pain",
        "she reports worsening dyspnea over the past week", "he denies recent travel or sick contacts",
        "symptoms began two days prior to admission", "in the ED initial vitals were notable for tachycardia",
        "family brought him in for increasing confusion"}},
      {"PAST MEDICAL HISTORY",
       {"hypertension", "type 2 diabetes mellitus", "coronary artery disease status post CABG",
        "chronic kidney disease stage III", "atrial fibrillation on anticoagulation", "COPD"}},
      {"SOCIAL HISTORY",
       {"lives alone in an apartment", "former smoker with a twenty pack year history",
        "drinks alcohol socially", "denies illicit drug use", "retired teacher"}},
      {"FAMILY HISTORY",
       {"mother with breast cancer", "father died of myocardial infarction at sixty",
        "no family history of early cardiac disease", "sister with lupus"}},
      {"PHYSICAL EXAM",
       {"vitals afebrile blood pressure stable", "general alert and oriented in no acute distress",
        "lungs clear to auscultation bilaterally", "heart regular rate and rhythm no murmurs",
        "abdomen soft nontender nondistended", "extremities without edema"}},
      {"PERTINENT RESULTS",
       {"WBC 12.4 Hgb 10.1 Plt 231", "troponin negative times two", "chest radiograph without consolidation",
        "sodium 134 potassium 4.1 creatinine 1.3", "CT abdomen with contrast unremarkable",
        "lactate 2.1"}},
      {"HOSPITAL COURSE",
       {"patient was admitted for further management", "started on intravenous antibiotics with improvement",
        "diuresed with furosemide and weaned off oxygen", "pain controlled with oral regimen",
        "seen by physical therapy who recommended rehab", "course complicated by acute kidney injury"}},
      {"MEDICATIONS",
       {"aspirin 81 mg daily", "metoprolol succinate 50 mg daily", "lisinopril 10 mg daily",
        "atorvastatin 40 mg nightly", "metformin 500 mg twice daily"}},
      {"DISCHARGE MEDICATIONS",
       {"continue home aspirin 81 mg", "new prescription amoxicillin 500 mg three times daily",
        "furosemide 20 mg by mouth once daily", "acetaminophen 650 mg every six hours as needed"}},
      {"DISCHARGE DISPOSITION",
       {"Home", "Home With Service", "Extended Care Facility", "Skilled nursing facility"}},
      {"DISCHARGE DIAGNOSIS",
       {"community acquired pneumonia", "acute on chronic systolic heart failure",
        "non ST elevation myocardial infarction", "urinary tract infection", "acute cholecystitis"}},
      {"DISCHARGE CONDITION",
       {"Mental Status Clear and coherent", "Level of Consciousness Alert and interactive",
        "Activity Status Ambulatory - Independent"}},
      {"DISCHARGE INSTRUCTIONS",
       {"you were admitted to the hospital for evaluation", "please take your medications as prescribed",
        "return to the emergency department if you develop worsening symptoms",
        "it was a pleasure taking care of you"}},
      {"FOLLOWUP INSTRUCTIONS",
       {"follow up with your primary care physician within one week", "cardiology clinic in two weeks",
        "___ appointment scheduled"}},
  };
  return banks;
}

const std::array<std::string, 6> kModifiers = {"", " today", " per report", " on review",
                                               " as documented", " noted"};

std::string title_case(const std::string& label) {
  std::string out;
  bool start = true;
  for (char c : label) {
    out.push_back(start ? c : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    start = c == ' ';
  }
  return out;
}

std::string body_sentence(const std::string& label, std::uint64_t& rng) {
  const auto& banks = phrase_banks();
  auto it = banks.find(label);
  std::string base;
  if (it != banks.end()) {
    base = it->second[bounded_draw(rng, it->second.size())];
  } else {
    base = "finding related to " + label;
    std::transform(base.begin(), base.end(), base.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  }
  return base + kModifiers[bounded_draw(rng, kModifiers.size())];
}

std::string header_text(const LabelOntology& ontology, const std::string& label, bool canonical,
                        std::uint64_t& rng) {
  const auto& aliases = ontology.aliases_of(label);
  if (aliases.empty()) return title_case(label);
  if (canonical) return aliases.front();
  std::string alias = aliases[bounded_draw(rng, aliases.size())];
  if (bounded_draw(rng, 4) == 0)
    std::transform(alias.begin(), alias.end(), alias.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return alias;
}

// Note lengths cluster around 18 sentences with a longer left tail.
std::size_t draw_note_length(std::uint64_t& rng) {
  static const std::array<int, 9> offsets = {-5, -4, -3, -2, -1, 0, 1, 2, 3};
  static const std::array<int, 9> weights = {2, 3, 4, 6, 10, 14, 8, 4, 2};
  const int total = std::accumulate(weights.begin(), weights.end(), 0);
  auto r = static_cast<int>(bounded_draw(rng, static_cast<std::uint64_t>(total)));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (r < weights[i]) return static_cast<std::size_t>(18 + offsets[i]);
    r -= weights[i];
  }
  return 18;
}

}  // namespace

SentenceCorpus generate_sentence_corpus(const SyntheticOptions& options,
                                        const LabelOntology& ontology) {
  if (options.notes == 0) throw Error(Errc::InvalidArgument, "need at least one note");
  std::uint64_t rng = options.seed;
  const std::size_t min_len = 3;

  std::vector<std::size_t> lengths(options.notes);
  for (auto& len : lengths) len = draw_note_length(rng);
  if (options.total_sentences > 0) {
    if (options.total_sentences < min_len * options.notes)
      throw Error(Errc::InvalidArgument, "sentence total too small for the note count");
    std::size_t sum = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
    while (sum != options.total_sentences) {
      auto& len = lengths[bounded_draw(rng, lengths.size())];
      if (sum < options.total_sentences) {
        ++len;
        ++sum;
      } else if (len > min_len) {
        --len;
        --sum;
      }
    }
  }

  std::vector<std::string> section_labels;
  for (const auto& label : ontology.labels())
    if (label != ontology.fallback_label()) section_labels.push_back(label);
  if (section_labels.empty()) throw Error(Errc::InvalidArgument, "ontology has no section labels");

  std::vector<LabeledSentence> sentences;
  for (std::size_t n = 0; n < options.notes; ++n) {
    char id_buf[32];
    std::snprintf(id_buf, sizeof id_buf, "note-%05zu", n);
    const std::string note_id = id_buf;
    std::size_t remaining = lengths[n];
    std::size_t position = 0;
    auto emit = [&](std::string text, const std::string& label) {
      sentences.push_back(LabeledSentence{note_id + ":" + std::to_string(position), note_id,
                                          position, std::move(text), label});
      ++position;
      --remaining;
    };

    if (bounded_draw(rng, 5) != 0) emit(body_sentence(ontology.fallback_label(), rng), ontology.fallback_label());

    std::size_t m = std::clamp<std::size_t>(remaining / 3 + bounded_draw(rng, 4), 1,
                                            std::min(section_labels.size(), remaining));
    // Ordered random subset of sections.
    std::vector<std::size_t> picks(section_labels.size());
    std::iota(picks.begin(), picks.end(), 0);
    for (std::size_t i = picks.size() - 1; i > 0; --i)
      std::swap(picks[i], picks[bounded_draw(rng, i + 1)]);
    picks.resize(m);
    std::sort(picks.begin(), picks.end());

    std::vector<std::size_t> section_sizes(m, 1);
    for (std::size_t extra = remaining - m; extra > 0; --extra)
      ++section_sizes[bounded_draw(rng, m)];

    for (std::size_t s = 0; s < m; ++s) {
      const std::string& label = section_labels[picks[s]];
      const bool with_header =
          options.header_explicit ||
          bounded_draw(rng, 1000) < static_cast<std::uint64_t>(options.header_rate * 1000.0);
      for (std::size_t i = 0; i < section_sizes[s]; ++i) {
        std::string text = body_sentence(label, rng);
        if (i == 0 && with_header) {
          std::string header = header_text(ontology, label, options.header_explicit, rng) + ":";
          // Standalone header fragments only when the section has room for a body.
          const bool standalone = section_sizes[s] > 1 && bounded_draw(rng, 2) == 0;
          text = standalone ? header : header + " " + text;
        }
        emit(std::move(text), label);
      }
    }
  }
  return SentenceCorpus(std::move(sentences), ontology);
}

}  // namespace cnseg
