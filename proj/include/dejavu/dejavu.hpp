#pragma once

#include "dejavu/core/image_io.hpp"
#include "dejavu/core/rng.hpp"
#include "dejavu/crm/crm.hpp"
#include "dejavu/harness/experiments.hpp"
#include "dejavu/harness/trainer.hpp"
#include "dejavu/losses/losses.hpp"
#include "dejavu/redaction/redaction.hpp"
#include "dejavu/sa/shared_attention.hpp"
#include "dejavu/tasks/dataset_io.hpp"
#include "dejavu/tasks/metrics.hpp"
