// SPDX-License-Identifier: Apache-2.0
#include "ronar/prompts.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "ronar/error.hpp"

namespace ronar::detail {
const std::vector<std::pair<std::string_view, std::string_view>>& embedded_prompts();
}

namespace ronar {

const std::string& PromptTemplate::section(std::string_view key) const {
  auto it = sections.find(std::string(key));
  if (it == sections.end())
    throw Error(ErrorCode::InvalidArgument, fmt::format("template '{}' has no [{}] section", name, key));
  return it->second;
}

namespace {

template <typename F>
void for_each_placeholder(std::string_view text, F&& f) {
  std::size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string_view::npos) {
    const auto end = text.find("}}", pos + 2);
    if (end == std::string_view::npos) break;
    f(pos, end + 2, text.substr(pos + 2, end - pos - 2));
    pos = end + 2;
  }
}

}  // namespace

std::vector<std::string> PromptTemplate::placeholders() const {
  std::set<std::string> names;
  for (const auto& [_, text] : sections)
    for_each_placeholder(text, [&](std::size_t, std::size_t, std::string_view key) { names.emplace(key); });
  return {names.begin(), names.end()};
}

PromptTemplate parse_prompt_template(std::string name, std::string_view text) {
  PromptTemplate tpl;
  tpl.name = std::move(name);
  std::istringstream in{std::string(text)};
  std::string line;
  std::string current;
  bool have_version = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_version) {
      if (line.empty()) continue;
      if (!line.starts_with("version:"))
        throw Error(ErrorCode::BadConfig, fmt::format("template '{}' must start with a version line", tpl.name));
      try {
        tpl.version = std::stoi(line.substr(8));
      } catch (const std::exception&) {
        throw Error(ErrorCode::BadConfig, fmt::format("template '{}' has a bad version line", tpl.name));
      }
      have_version = true;
      continue;
    }
    if (line.size() > 2 && line.front() == '[' && line.back() == ']' && line.find(' ') == std::string::npos) {
      current = line.substr(1, line.size() - 2);
      tpl.sections[current];
      continue;
    }
    if (current.empty()) {
      if (line.empty()) continue;
      throw Error(ErrorCode::BadConfig, fmt::format("template '{}' has text outside a section", tpl.name));
    }
    auto& body = tpl.sections[current];
    if (!body.empty()) body += '\n';
    body += line;
  }
  if (!have_version) throw Error(ErrorCode::BadConfig, fmt::format("template '{}' is empty", tpl.name));
  for (auto& [_, body] : tpl.sections)
    while (!body.empty() && body.back() == '\n') body.pop_back();
  return tpl;
}

std::string fill_placeholders(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t last = 0;
  for_each_placeholder(text, [&](std::size_t begin, std::size_t end, std::string_view key) {
    auto it = values.find(std::string(key));
    if (it == values.end()) throw Error(ErrorCode::InvalidArgument, fmt::format("no value for placeholder '{}'", key));
    out.append(text.substr(last, begin - last));
    out += it->second;
    last = end;
  });
  out.append(text.substr(last));
  return out;
}

const PromptLibrary& PromptLibrary::builtin() {
  static const PromptLibrary lib = [] {
    PromptLibrary l;
    for (const auto& [name, text] : detail::embedded_prompts())
      l.templates_.emplace(std::string(name), parse_prompt_template(std::string(name), text));
    return l;
  }();
  return lib;
}

PromptLibrary PromptLibrary::with_overrides(const std::filesystem::path& dir) {
  PromptLibrary lib = builtin();
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorCode::BadConfig, fmt::format("'{}' is not a directory", dir.string()));
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path());
    std::stringstream ss;
    ss << in.rdbuf();
    auto name = entry.path().stem().string();
    lib.templates_.insert_or_assign(name, parse_prompt_template(name, ss.str()));
  }
  return lib;
}

const PromptTemplate& PromptLibrary::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw Error(ErrorCode::InvalidArgument, fmt::format("unknown prompt template '{}'", name));
  return it->second;
}

bool PromptLibrary::contains(std::string_view name) const { return templates_.find(name) != templates_.end(); }

std::vector<std::string> PromptLibrary::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : templates_) out.push_back(name);
  return out;
}

RenderedPrompt PromptLibrary::render(std::string_view name, const std::map<std::string, std::string>& values) const {
  const auto& tpl = get(name);
  return RenderedPrompt{fill_placeholders(tpl.section("system"), values), fill_placeholders(tpl.section("user"), values), tpl.name,
                        tpl.version};
}

}  // namespace ronar
