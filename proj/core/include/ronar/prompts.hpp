// SPDX-License-Identifier: Apache-2.0
//
// Versioned prompt templates. A template file starts with "version: N" and
// holds named sections ("[system]", "[user]", "[directive]") whose text may
// contain {{placeholder}} slots.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ronar {

struct PromptTemplate {
  std::string name;
  int version = 0;
  std::map<std::string, std::string> sections;

  /// Throws InvalidArgument if the section is missing.
  const std::string& section(std::string_view key) const;
  /// Placeholder names used anywhere in the template, sorted and unique.
  std::vector<std::string> placeholders() const;
};

/// Parses template text. Throws BadConfig on a missing version line or
/// text outside a section.
PromptTemplate parse_prompt_template(std::string name, std::string_view text);

/// Replaces every {{key}} with its value. Throws InvalidArgument when a
/// placeholder has no value.
std::string fill_placeholders(std::string_view text, const std::map<std::string, std::string>& values);

struct RenderedPrompt {
  std::string system;
  std::string user;
  std::string template_name;
  int template_version = 0;
};

class PromptLibrary {
 public:
  /// Templates compiled into the library.
  static const PromptLibrary& builtin();
  /// Built-in templates overridden by any *.txt files in `dir`.
  static PromptLibrary with_overrides(const std::filesystem::path& dir);

  const PromptTemplate& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

  /// Renders the [system] and [user] sections of `name`.
  RenderedPrompt render(std::string_view name, const std::map<std::string, std::string>& values) const;

 private:
  std::map<std::string, PromptTemplate, std::less<>> templates_;
};

}  // namespace ronar
