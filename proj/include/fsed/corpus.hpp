#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fsed/synthesis.hpp"

namespace fsed {

/// On-disk corpus layouts understood by `ingest_corpus`.
///  - Flat:      <root>/<class>/<file>.wav
///  - Esc50:     <root>/audio/<fold>-<id>-<take>-<target>.wav, optional <root>/meta/esc50.csv
///  - VoxCeleb2: <root>/<speaker>/<video>/<utterance>.wav
///  - Backgrounds: <root>/**/*.wav, all mapped to class "background"
enum class CorpusLayout { Flat, Esc50, VoxCeleb2, Backgrounds };

CorpusLayout parse_layout(const std::string& name);
std::string layout_name(CorpusLayout layout);

/// Loads every readable WAV under `root` as 16 kHz mono, sorted by relative path.
/// Unreadable files are skipped with a warning on stderr.
std::vector<SourceClip> ingest_corpus(const std::filesystem::path& root, CorpusLayout layout);

}  // namespace fsed
