from hypothesis import settings

# Dense solves on the first example can exceed the default 200 ms deadline.
settings.register_profile("ftgmap", deadline=None, max_examples=50)
settings.load_profile("ftgmap")
