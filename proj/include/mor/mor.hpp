#pragma once

#include "mor/core.hpp"
#include "mor/backend.hpp"
#include "mor/toy_backend.hpp"
#include "mor/oracle_backend.hpp"
#include "mor/remote_backend.hpp"
#include "mor/rationale.hpp"
#include "mor/thought_engine.hpp"
#include "mor/eval.hpp"
