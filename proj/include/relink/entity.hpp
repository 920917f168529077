#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace relink {

struct Entity {
    std::string entity_id;
    std::string name;
    std::vector<std::string> aliases;

    bool operator==(const Entity&) const = default;
};

/// Registry of canonical entities. Lookups by surface form are ASCII
/// case-insensitive; a canonical name always wins over another entity's alias.
class EntityCatalog {
public:
    void add(Entity entity);

    bool contains(std::string_view entity_id) const;
    const Entity& at(std::string_view entity_id) const;
    const Entity* find(std::string_view entity_id) const;
    const std::string& name_of(std::string_view entity_id) const;

    /// Resolves a name or alias to its entity id.
    std::optional<std::string> resolve(std::string_view surface) const;

    /// Insertion order.
    const std::vector<Entity>& entities() const { return entities_; }
    std::size_t size() const { return entities_.size(); }
    bool empty() const { return entities_.empty(); }

    nlohmann::json to_json() const;
    static EntityCatalog from_json(const nlohmann::json& j);

    bool operator==(const EntityCatalog& other) const { return entities_ == other.entities_; }

private:
    std::vector<Entity> entities_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::size_t> by_name_;   // lowercased canonical names
    std::unordered_map<std::string, std::size_t> by_alias_;  // lowercased aliases, first wins
};

/// JSON-lines: {"entity_id": ..., "name": ..., "aliases": [...]}
EntityCatalog load_entity_catalog(const std::filesystem::path& path);

} // namespace relink
