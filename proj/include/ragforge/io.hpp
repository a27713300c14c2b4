#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ragforge/attack.hpp"
#include "ragforge/corpus.hpp"
#include "ragforge/defense.hpp"
#include "ragforge/shadow.hpp"

namespace ragforge {

// Parse failures raise DataError with "path:line: reason".

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view contents);

/// JSONL {"id","text"}. Throws on an empty file.
std::vector<Document> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const Document> docs);

/// JSONL {"qid","text"}.
std::vector<Query> read_queries(const std::filesystem::path& path);
void write_queries(const std::filesystem::path& path, std::span<const Query> queries);

/// JSONL {"qid","topic"}.
std::vector<std::pair<std::string, int>> read_topic_labels(const std::filesystem::path& path);

/// JSONL {"word","synonyms":[...]}.
SynonymTable read_synonyms(const std::filesystem::path& path);

/// JSONL {"id","text","topic","loss","recipe":{"prefix","freq","suffix"}}.
void write_poison_set(const std::filesystem::path& path, const PoisonSet& set, const Vocabulary& vocab);
/// The prefix template is recovered by replacing the first occurrence of url in the stored prefix.
PoisonSet read_poison_set(const std::filesystem::path& path, const Vocabulary& vocab, std::string_view url);

/// JSON array of tokens in id order.
void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary read_vocabulary(const std::filesystem::path& path);

/// Binary index: documents, provenance, embeddings and the encoder fingerprint.
void write_index(const std::filesystem::path& path, const KnowledgeBase& kb);
KnowledgeBase read_index(const std::filesystem::path& path);

/// {"<topic>": [qid, ...]} in topic order.
std::string partition_to_json(const TopicPartition& partition, std::span<const Query> shadow);

}  // namespace ragforge
