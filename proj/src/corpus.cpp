#include "fsed/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fsed {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<fs::path> wav_files(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::exists(dir)) return files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file() && lower(entry.path().extension().string()) == ".wav") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

// filename -> category from ESC-50's meta CSV (filename,fold,target,category,...).
std::map<std::string, std::string> esc50_categories(const fs::path& root) {
    std::map<std::string, std::string> out;
    std::ifstream in(root / "meta" / "esc50.csv");
    if (!in) return out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::vector<std::string> cols;
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() >= 4) out[cols[0]] = cols[3];
    }
    return out;
}

std::string esc50_target(const fs::path& file) {
    const std::string stem = file.stem().string();
    const auto dash = stem.rfind('-');
    if (dash == std::string::npos) throw Error("unexpected ESC-50 file name: " + file.string());
    return "esc" + stem.substr(dash + 1);
}

}  // namespace

CorpusLayout parse_layout(const std::string& name) {
    const std::string n = lower(name);
    if (n == "flat") return CorpusLayout::Flat;
    if (n == "esc50" || n == "esc-50") return CorpusLayout::Esc50;
    if (n == "vox" || n == "voxceleb2") return CorpusLayout::VoxCeleb2;
    if (n == "backgrounds" || n == "tut") return CorpusLayout::Backgrounds;
    throw Error("unknown corpus layout: " + name);
}

std::string layout_name(CorpusLayout layout) {
    switch (layout) {
        case CorpusLayout::Flat: return "flat";
        case CorpusLayout::Esc50: return "esc50";
        case CorpusLayout::VoxCeleb2: return "voxceleb2";
        case CorpusLayout::Backgrounds: return "backgrounds";
    }
    return "flat";
}

std::vector<SourceClip> ingest_corpus(const fs::path& root, CorpusLayout layout) {
    if (!fs::is_directory(root)) throw Error("corpus not found: " + root.string());

    const fs::path audio_root = layout == CorpusLayout::Esc50 ? root / "audio" : root;
    const auto categories = layout == CorpusLayout::Esc50 ? esc50_categories(root)
                                                          : std::map<std::string, std::string>{};
    const std::string tag = layout_name(layout);

    std::vector<SourceClip> clips;
    for (const fs::path& file : wav_files(audio_root)) {
        const fs::path rel = fs::relative(file, audio_root);
        std::string class_id;
        switch (layout) {
            case CorpusLayout::Flat:
            case CorpusLayout::VoxCeleb2:
                if (std::distance(rel.begin(), rel.end()) < 2) {
                    std::cerr << "warning: skipping " << file << ": not inside a class directory\n";
                    continue;
                }
                class_id = rel.begin()->string();
                break;
            case CorpusLayout::Esc50: {
                auto it = categories.find(file.filename().string());
                class_id = it != categories.end() ? it->second : esc50_target(file);
                break;
            }
            case CorpusLayout::Backgrounds:
                class_id = "background";
                break;
        }
        try {
            clips.push_back({class_id, load_audio(file), tag + ":" + rel.generic_string()});
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping " << file << ": " << e.what() << "\n";
        }
    }
    if (clips.empty()) throw Error("empty corpus: " + root.string());
    return clips;
}

}  // namespace fsed
