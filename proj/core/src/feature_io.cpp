#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mpc/features.hpp"

namespace mpc {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'C', 'F'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

struct Record {
  std::string id;
  Tensor frames;
};

void write_record(std::ostream& os, const std::string& id, const Tensor& frames) {
  os.write(kMagic, 4);
  put_u32(os, kFeatureArchiveVersion);
  put_u32(os, static_cast<std::uint32_t>(id.size()));
  os.write(id.data(), static_cast<std::streamsize>(id.size()));
  put_u32(os, static_cast<std::uint32_t>(frames.rows()));
  put_u32(os, static_cast<std::uint32_t>(frames.cols()));
  for (double v : frames.data()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::vector<Record> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("feature archive: cannot open " + path.string());
  std::vector<Record> records;
  auto fail = [&](const std::string& why) {
    return Error("feature archive: " + path.string() + ": record " + std::to_string(records.size()) + ": " + why);
  };
  for (;;) {
    char magic[4];
    if (!in.read(magic, 4)) {
      if (in.gcount() == 0) break;
      throw fail("truncated magic");
    }
    if (std::memcmp(magic, kMagic, 4) != 0) throw fail("bad magic");
    std::uint32_t version = 0, id_len = 0, t = 0, d = 0;
    if (!get_u32(in, version)) throw fail("truncated header");
    if (version != kFeatureArchiveVersion) throw fail("unsupported version " + std::to_string(version));
    if (!get_u32(in, id_len)) throw fail("truncated header");
    std::string id(id_len, '\0');
    if (!in.read(id.data(), id_len)) throw fail("truncated id");
    if (!get_u32(in, t) || !get_u32(in, d)) throw fail("truncated shape");
    std::vector<double> data(static_cast<std::size_t>(t) * d);
    for (double& v : data) {
      std::uint32_t bits = 0;
      if (!get_u32(in, bits)) throw fail("truncated frame data");
      v = static_cast<double>(std::bit_cast<float>(bits));
    }
    records.push_back({std::move(id), Tensor(Shape{t, d}, std::move(data))});
  }
  return records;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("manifest: cannot open " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() == 3) fields.emplace_back();
    if (fields.size() != 4) {
      throw Error("manifest: " + path.string() + ":" + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                  std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw Error("manifest: " + path.string() + ":" + std::to_string(line_no) + ": empty utterance id");
    ManifestEntry e{fields[0], fields[1], fields[2], fields[3]};
    if (!e.wav_path.empty() && std::filesystem::path(e.wav_path).is_relative()) e.wav_path = (base / e.wav_path).string();
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ostringstream os;
  for (const auto& e : entries) os << e.utterance_id << '\t' << e.wav_path << '\t' << e.speaker_id << '\t' << e.transcript << '\n';
  write_file(path, os.str());
}

void write_feature_archive(const std::filesystem::path& path, const std::vector<FeatureSequence>& seqs) {
  std::ostringstream os(std::ios::binary);
  for (const auto& s : seqs) write_record(os, s.utterance_id, s.frames);
  write_file(path, os.str());
}

std::vector<FeatureSequence> read_feature_archive(const std::filesystem::path& path) {
  std::vector<FeatureSequence> seqs;
  for (auto& r : read_records(path)) {
    FeatureSequence s;
    s.utterance_id = std::move(r.id);
    s.frames = std::move(r.frames);
    seqs.push_back(std::move(s));
  }
  return seqs;
}

void write_speaker_stats(const std::filesystem::path& path, const SpeakerStats& stats) {
  std::ostringstream os(std::ios::binary);
  auto put = [&](const std::string& id, const SpeakerStats::Moments& m) {
    const std::size_t d = m.mean.size();
    std::vector<double> data(m.mean);
    data.insert(data.end(), m.stddev.begin(), m.stddev.end());
    write_record(os, id, Tensor(Shape{2, d}, std::move(data)));
  };
  put("*", stats.global);
  for (const auto& [speaker, m] : stats.speakers) put(speaker, m);
  write_file(path, os.str());
}

SpeakerStats read_speaker_stats(const std::filesystem::path& path) {
  SpeakerStats stats;
  bool have_global = false;
  for (const auto& r : read_records(path)) {
    if (r.frames.rows() != 2) throw Error("speaker stats: " + path.string() + ": record '" + r.id + "' must have T = 2");
    SpeakerStats::Moments m;
    m.mean.assign(r.frames.row(0).begin(), r.frames.row(0).end());
    m.stddev.assign(r.frames.row(1).begin(), r.frames.row(1).end());
    if (r.id == "*") {
      stats.global = std::move(m);
      have_global = true;
    } else {
      stats.speakers[r.id] = std::move(m);
    }
  }
  if (!have_global) throw Error("speaker stats: " + path.string() + ": missing global record '*'");
  return stats;
}

}  // namespace mpc
