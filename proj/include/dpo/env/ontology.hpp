#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpo/core/error.hpp"

namespace dpo {

struct ConstraintSlot {
  std::string name;
  std::vector<std::string> values;
};

/// A database row. `constraints[s]` indexes into constraint slot s's value list;
/// `informables[r]` is the text of requestable slot r.
struct Entity {
  std::string name;
  std::vector<int> constraints;
  std::vector<std::string> informables;
};

/// Sentinel for "slot not constrained" in queries and goals.
inline constexpr int kUnconstrained = -1;

/// Slot-filling domain: searchable slots, requestable slots and the database.
struct Ontology {
  std::vector<ConstraintSlot> constraint_slots;
  std::vector<std::string> requestable_slots;
  std::vector<Entity> entities;

  int slot_count() const { return static_cast<int>(constraint_slots.size()); }
  int requestable_count() const { return static_cast<int>(requestable_slots.size()); }
  int value_count(int slot) const {
    return static_cast<int>(constraint_slots.at(static_cast<std::size_t>(slot)).values.size());
  }

  /// request/confirm/select per constraint slot plus five slot-less intents.
  int action_count() const { return 3 * slot_count() + 5; }

  void validate() const {
    if (constraint_slots.empty()) throw SpecError("ontology: no constraint slots");
    if (requestable_slots.empty()) throw SpecError("ontology: no requestable slots");
    if (entities.empty()) throw SpecError("ontology: empty database");
    for (const auto& slot : constraint_slots) {
      if (slot.values.empty()) throw SpecError("ontology: slot " + slot.name + " has no values");
    }
    for (const auto& e : entities) {
      if (static_cast<int>(e.constraints.size()) != slot_count() ||
          static_cast<int>(e.informables.size()) != requestable_count()) {
        throw SpecError("ontology: entity " + e.name + " does not define every slot");
      }
      for (int s = 0; s < slot_count(); ++s) {
        const int v = e.constraints[static_cast<std::size_t>(s)];
        if (v < 0 || v >= value_count(s)) {
          throw SpecError("ontology: entity " + e.name + " has an out-of-range value");
        }
      }
    }
  }

  bool matches(const Entity& e, const std::vector<int>& query) const {
    for (int s = 0; s < slot_count(); ++s) {
      const int q = query[static_cast<std::size_t>(s)];
      if (q != kUnconstrained && e.constraints[static_cast<std::size_t>(s)] != q) return false;
    }
    return true;
  }

  /// Indices of entities consistent with `query`, in database order.
  std::vector<int> matching(const std::vector<int>& query) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < entities.size(); ++i) {
      if (matches(entities[i], query)) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  /// Three slots with five values each, three requestables, thirty venues.
  static Ontology desk() {
    Ontology o;
    o.constraint_slots = {
        {"food", {"italian", "chinese", "indian", "british", "french"}},
        {"area", {"north", "south", "east", "west", "centre"}},
        {"pricerange", {"cheap", "budget", "moderate", "expensive", "luxury"}},
    };
    o.requestable_slots = {"phone", "address", "postcode"};
    for (int i = 0; i < 30; ++i) {
      Entity e;
      char name[32];
      std::snprintf(name, sizeof name, "venue_%02d", i);
      e.name = name;
      e.constraints = {i % 5, (i / 5) % 5, (3 * i + i / 5 + 1) % 5};
      e.informables = {"01223 " + std::to_string(350000 + 17 * i),
                       std::to_string(i + 1) + " Market Street",
                       "CB" + std::to_string(1 + i % 9) + " " + std::to_string(i % 7) + "AB"};
      o.entities.push_back(std::move(e));
    }
    return o;
  }
};

inline nlohmann::json ontology_to_json(const Ontology& o) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : o.constraint_slots) slots.push_back({{"name", s.name}, {"values", s.values}});
  nlohmann::json entities = nlohmann::json::array();
  for (const auto& e : o.entities) {
    nlohmann::json row = {{"name", e.name}};
    for (int s = 0; s < o.slot_count(); ++s) {
      const auto& slot = o.constraint_slots[static_cast<std::size_t>(s)];
      row[slot.name] = slot.values[static_cast<std::size_t>(e.constraints[static_cast<std::size_t>(s)])];
    }
    for (int r = 0; r < o.requestable_count(); ++r) {
      row[o.requestable_slots[static_cast<std::size_t>(r)]] = e.informables[static_cast<std::size_t>(r)];
    }
    entities.push_back(std::move(row));
  }
  return {{"constraint_slots", slots}, {"requestable_slots", o.requestable_slots}, {"entities", entities}};
}

/// Entities are objects keyed by slot name: {"name": ..., "food": "italian", "phone": ...}.
inline Ontology ontology_from_json(const nlohmann::json& j) {
  Ontology o;
  try {
    for (const auto& s : j.at("constraint_slots")) {
      o.constraint_slots.push_back({s.at("name").get<std::string>(), s.at("values").get<std::vector<std::string>>()});
    }
    o.requestable_slots = j.at("requestable_slots").get<std::vector<std::string>>();
    for (const auto& row : j.at("entities")) {
      Entity e;
      e.name = row.value("name", "entity_" + std::to_string(o.entities.size()));
      for (const auto& slot : o.constraint_slots) {
        const auto text = row.at(slot.name).get<std::string>();
        const auto it = std::find(slot.values.begin(), slot.values.end(), text);
        if (it == slot.values.end()) {
          throw SpecError("ontology: entity " + e.name + " uses unknown " + slot.name + " value " + text);
        }
        e.constraints.push_back(static_cast<int>(it - slot.values.begin()));
      }
      for (const auto& r : o.requestable_slots) e.informables.push_back(row.at(r).get<std::string>());
      o.entities.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("ontology: ") + e.what());
  }
  o.validate();
  return o;
}

inline Ontology load_ontology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ontology " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("ontology " + path.string() + ": " + e.what());
  }
  return ontology_from_json(j);
}

}  // namespace dpo
