"""Knowledge-infused relation extraction between cannabis and depression mentions."""
